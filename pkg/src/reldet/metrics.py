"""COCO-style detection metrics: interpolated AP, size buckets, and AR.

AP uses 101-point interpolation over recall levels 0.00..1.00. Matching is
greedy in descending score order; each ground-truth box is matched at most
once, and a detection matches the highest-IoU unmatched gt of its image.
Size buckets follow the COCO convention: small < 32^2, medium < 96^2,
large otherwise, applied to both ground truth and detections.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import boxes as B

IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_LEVELS = np.linspace(0.0, 1.0, 101)
AREA_BUCKETS = {"small": (0.0, 32.0 ** 2), "medium": (32.0 ** 2, 96.0 ** 2),
                "large": (96.0 ** 2, float("inf"))}

METRIC_FIELDS = ("AP", "AP50", "AP75", "APs", "APm", "APl",
                 "AR1", "AR10", "AR100")


def _match(dets, gts_by_image: dict, iou_thresh: float,
           per_image_cap: int | None = None) -> tuple[np.ndarray, int]:
    """Greedy matching. dets: list of (image_id, box, score), any order.

    Returns (tp flags aligned with descending-score order, total gt count).
    """
    n_gt = sum(len(v) for v in gts_by_image.values())
    if per_image_cap is not None:
        by_img: dict = {}
        for d in dets:
            by_img.setdefault(d[0], []).append(d)
        capped = []
        for img, items in by_img.items():
            items.sort(key=lambda d: -d[2])
            capped.extend(items[:per_image_cap])
        dets = capped
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    tp = np.zeros(len(order))
    used: dict = {img: np.zeros(len(g), dtype=bool)
                  for img, g in gts_by_image.items()}
    for rank, i in enumerate(order):
        img, box, _score = dets[i]
        gts = gts_by_image.get(img)
        if gts is None or not len(gts):
            continue
        ious = B.iou_matrix(np.asarray(box)[None], np.asarray(gts))[0]
        ious[used[img]] = -1.0
        j = int(np.argmax(ious))
        if ious[j] >= iou_thresh:
            used[img][j] = True
            tp[rank] = 1.0
    return tp, n_gt


def _ap_from_tp(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from ordered true-positive flags."""
    if n_gt == 0:
        return 0.0
    if len(tp) == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    recall = cum_tp / n_gt
    precision = cum_tp / np.arange(1, len(tp) + 1)
    # precision envelope: best precision at recall >= r
    ap = 0.0
    for r in RECALL_LEVELS:
        mask = recall >= r - 1e-12
        ap += float(precision[mask].max()) if mask.any() else 0.0
    return ap / len(RECALL_LEVELS)


def average_precision(dets, gts_by_image: dict, iou_thresh: float) -> float:
    """Single-class AP. dets: [(image_id, box, score)]; gts_by_image:
    image_id -> list of gt boxes."""
    tp, n_gt = _match(dets, gts_by_image, iou_thresh)
    return _ap_from_tp(tp, n_gt)


def _recall(dets, gts_by_image: dict, iou_thresh: float, cap: int) -> float:
    tp, n_gt = _match(dets, gts_by_image, iou_thresh, per_image_cap=cap)
    if n_gt == 0:
        return 0.0
    return float(tp.sum()) / n_gt


def _bucket_filter(dets, gts_by_image, lo, hi):
    def area(box):
        return (box[2] - box[0]) * (box[3] - box[1])
    d = [t for t in dets if lo <= area(t[1]) < hi]
    g = {img: [b for b in boxes if lo <= area(b) < hi]
         for img, boxes in gts_by_image.items()}
    return d, g


def evaluate_detections(dets, gts, class_ids=None) -> dict:
    """Full metric set.

    dets: [(image_id, box, score, class_id)]; gts: [(image_id, box, class_id)].
    AP values are averaged over classes that have at least one gt (or one
    bucket gt for size metrics). Returns {metric_name: float} plus
    'per_class_ap'.
    """
    if class_ids is None:
        class_ids = sorted({g[2] for g in gts})
    per_class_ap: dict = {}
    ap_all, ap50_all, ap75_all = [], [], []
    aps_bucket = {k: [] for k in AREA_BUCKETS}
    ar = {1: [], 10: [], 100: []}

    for cid in class_ids:
        cdets = [(d[0], d[1], d[2]) for d in dets if d[3] == cid]
        gts_by_image: dict = {}
        for g in gts:
            if g[2] == cid:
                gts_by_image.setdefault(g[0], []).append(g[1])
        n_gt = sum(len(v) for v in gts_by_image.values())
        if n_gt == 0:
            continue
        aps = [average_precision(cdets, gts_by_image, t) for t in IOU_THRESHOLDS]
        ap_all.append(float(np.mean(aps)))
        ap50_all.append(aps[0])
        ap75_all.append(aps[5])
        per_class_ap[int(cid)] = float(np.mean(aps))
        for name, (lo, hi) in AREA_BUCKETS.items():
            bd, bg = _bucket_filter(cdets, gts_by_image, lo, hi)
            if sum(len(v) for v in bg.values()) == 0:
                continue
            aps_bucket[name].append(float(np.mean(
                [average_precision(bd, bg, t) for t in IOU_THRESHOLDS])))
        for cap in ar:
            ar[cap].append(float(np.mean(
                [_recall(cdets, gts_by_image, t, cap) for t in IOU_THRESHOLDS])))

    def m(vals):
        return float(np.mean(vals)) if vals else 0.0

    return {
        "AP": m(ap_all), "AP50": m(ap50_all), "AP75": m(ap75_all),
        "APs": m(aps_bucket["small"]), "APm": m(aps_bucket["medium"]),
        "APl": m(aps_bucket["large"]),
        "AR1": m(ar[1]), "AR10": m(ar[10]), "AR100": m(ar[100]),
        "per_class_ap": per_class_ap,
    }


@dataclass
class EvalResult:
    """Seed-averaged metrics for one shot count."""
    k: int
    seeds: list
    mean: dict
    std: dict
    per_class_ap: dict
    per_seed: list = field(default_factory=list)

    @staticmethod
    def from_seed_metrics(k: int, seeds, per_seed: list) -> "EvalResult":
        mean, std = {}, {}
        for name in METRIC_FIELDS:
            vals = np.array([m[name] for m in per_seed])
            mean[name] = float(vals.mean())
            std[name] = float(vals.std())
        classes = sorted({c for m in per_seed for c in m["per_class_ap"]})
        per_class = {c: float(np.mean([m["per_class_ap"].get(c, 0.0)
                                       for m in per_seed])) for c in classes}
        return EvalResult(k=k, seeds=list(seeds), mean=mean, std=std,
                          per_class_ap=per_class, per_seed=per_seed)

    def to_json(self) -> str:
        doc = {"k": self.k, "seeds": self.seeds, "mean": self.mean,
               "std": self.std,
               "per_class_ap": {str(c): v for c, v in self.per_class_ap.items()},
               "per_seed": [{n: m[n] for n in METRIC_FIELDS}
                            for m in self.per_seed]}
        return json.dumps(doc, indent=2, sort_keys=True)

    def write_csv(self, path):
        """Fixed columns: k,seed,AP,AP50,AP75,APs,APm,APl,AR1,AR10,AR100.

        One row per seed, then rows with seed='mean' and seed='std'.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["k", "seed", *METRIC_FIELDS])
            for seed, m in zip(self.seeds, self.per_seed):
                w.writerow([self.k, seed, *(f"{m[n]:.6f}" for n in METRIC_FIELDS)])
            w.writerow([self.k, "mean", *(f"{self.mean[n]:.6f}"
                                          for n in METRIC_FIELDS)])
            w.writerow([self.k, "std", *(f"{self.std[n]:.6f}"
                                         for n in METRIC_FIELDS)])
