"""N-way K-shot evaluation: sample supports per seed, detect on every novel
query, score with COCO-style metrics, report mean and std across seeds."""

from __future__ import annotations

import numpy as np

from .autodiff import no_grad
from .config import Config
from .data import ChipCache, DatasetSplit, prepare_query, sample_supports
from .metrics import EvalResult, evaluate_detections
from .model import FewShotDetector


def collect_query_truth(split: DatasetSplit, max_queries: int = 0):
    """[(image_id, box, class_id)] over novel queries, novel classes only."""
    queries = sorted(split.novel_queries)
    if max_queries > 0:
        queries = queries[:max_queries]
    gts = []
    for iid in queries:
        for ann in split.dataset.images[iid].annotations:
            if ann.category_id in split.novel_classes:
                gts.append((iid, ann.box.copy(), ann.category_id))
    return queries, gts


def evaluate_with_detector(detect_fn, split: DatasetSplit,
                           max_queries: int = 0,
                           score_thresh: float = 0.0) -> dict:
    """Run any detector callable over the novel queries and score it.

    detect_fn(image_id) -> list of Detection in raw image coordinates.
    """
    queries, gts = collect_query_truth(split, max_queries)
    dets = []
    for iid in queries:
        for d in detect_fn(iid):
            if d.score >= score_thresh:
                dets.append((iid, np.asarray(d.box, dtype=np.float64),
                             float(d.score), int(d.class_id)))
    class_ids = sorted(split.novel_classes)
    return evaluate_detections(dets, gts, class_ids)


def evaluate_model(model: FewShotDetector, cfg: Config, split: DatasetSplit,
                   k: int, seeds, support_override: dict | None = None,
                   ) -> EvalResult:
    """The seeded protocol: per seed, draw k supports per novel class, build
    prototypes once, detect on every novel query, and aggregate metrics.

    support_override (class_id -> [Annotation]) pins the support draw,
    letting callers evaluate a fixed support set (the fine-tune contract);
    the seed list then only affects nothing and should have length 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    chips = ChipCache(split.dataset, cfg.data.chip_size,
                      cfg.data.chip_input_size)
    for cid in sorted(split.novel_classes):
        pool = split.supports_by_class.get(cid, [])
        if support_override is None and len(pool) < k:
            raise ValueError(
                f"class {cid}: only {len(pool)} supports, need k={k}")

    per_seed = []
    for seed in seeds:
        rng = np.random.default_rng([int(seed), k, 101])
        protos = []
        for cid in sorted(split.novel_classes):
            if support_override is not None:
                anns = support_override[cid]
            else:
                anns = sample_supports(split, cid, k, rng)
            with no_grad():
                protos.append(model.build_prototype(chips.stack(anns),
                                                    class_id=cid))

        def detect_fn(image_id, _protos=protos):
            raw = split.dataset.load_image(image_id)
            prepared, scale = prepare_query(raw, cfg.data.query_max_side)
            dets = model.detect_with_prototypes(prepared, _protos,
                                                max_dets=cfg.eval.max_dets)
            if scale != 1.0:
                for d in dets:
                    d.box = d.box / scale
            return dets

        per_seed.append(evaluate_with_detector(
            detect_fn, split, cfg.eval.max_queries, cfg.eval.score_thresh))
    return EvalResult.from_seed_metrics(k, list(seeds), per_seed)
