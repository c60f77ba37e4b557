"""Dataset ingestion, class splitting, support-chip preparation, and the
episodic sampler.

Annotations follow the COCO JSON layout (images / annotations / categories,
boxes as x,y,w,h); internally boxes become (x1,y1,x2,y2). Query images and
support chips are float32 (3,H,W) arrays in [0,1].
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import Tensor, no_grad
from .ops import bilinear_resize


@dataclass
class Annotation:
    id: int
    image_id: int
    category_id: int
    box: np.ndarray  # (4,) xyxy
    area: float


@dataclass
class ImageRecord:
    id: int
    file_name: str
    width: int
    height: int
    annotations: list = field(default_factory=list)


class Dataset:
    """Immutable in-memory index over a COCO-style annotation file."""

    def __init__(self, images: dict, categories: dict, image_root: Path):
        self.images = images            # id -> ImageRecord
        self.categories = categories    # id -> name
        self.image_root = Path(image_root)
        self._cache: dict[int, np.ndarray] = {}

    def image_ids(self):
        return sorted(self.images)

    def annotations(self):
        for iid in self.image_ids():
            yield from self.images[iid].annotations

    def class_instance_counts(self) -> dict:
        counts = {cid: 0 for cid in self.categories}
        for ann in self.annotations():
            counts[ann.category_id] += 1
        return counts

    def load_image(self, image_id: int) -> np.ndarray:
        """(3,H,W) float32 in [0,1]; cached after first load."""
        if image_id in self._cache:
            return self._cache[image_id]
        rec = self.images.get(image_id)
        if rec is None:
            raise KeyError(f"unknown image id: {image_id}")
        path = self.image_root / rec.file_name
        if not path.exists():
            raise FileNotFoundError(f"image file not found: {path}")
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
        img = np.ascontiguousarray(arr.transpose(2, 0, 1))
        self._cache[image_id] = img
        return img


def load_coco(ann_path, image_root) -> Dataset:
    ann_path = Path(ann_path)
    if not ann_path.exists():
        raise FileNotFoundError(f"annotation file not found: {ann_path}")
    try:
        doc = json.loads(ann_path.read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed annotation JSON in {ann_path}: {e}") from e
    for key in ("images", "annotations", "categories"):
        if key not in doc or not isinstance(doc[key], list):
            raise ValueError(f"{ann_path}: missing or invalid '{key}' array")

    categories = {int(c["id"]): str(c["name"]) for c in doc["categories"]}
    images: dict[int, ImageRecord] = {}
    for im in doc["images"]:
        rec = ImageRecord(id=int(im["id"]), file_name=str(im["file_name"]),
                          width=int(im["width"]), height=int(im["height"]))
        images[rec.id] = rec
    for a in doc["annotations"]:
        iid = int(a["image_id"])
        if iid not in images:
            raise ValueError(
                f"annotation {a.get('id')} references unknown image {iid}")
        cid = int(a["category_id"])
        if cid not in categories:
            raise ValueError(
                f"annotation {a.get('id')} references unknown category {cid}")
        x, y, w, h = (float(v) for v in a["bbox"])
        ann = Annotation(id=int(a["id"]), image_id=iid, category_id=cid,
                         box=np.array([x, y, x + w, y + h]), area=float(w * h))
        images[iid].annotations.append(ann)
    return Dataset(images, categories, Path(image_root))


@dataclass
class DatasetSplit:
    """Base/novel partition with per-class support instance pools."""
    dataset: Dataset
    base_classes: frozenset
    novel_classes: frozenset
    base_queries: list            # image ids with >= 1 base annotation
    novel_queries: list
    supports_by_class: dict       # class id -> [Annotation], area-filtered


def split_classes(dataset: Dataset, base_ids, novel_ids,
                  min_support_area: float = 1024.0) -> DatasetSplit:
    base = frozenset(int(i) for i in base_ids)
    novel = frozenset(int(i) for i in novel_ids)
    overlap = base & novel
    if overlap:
        raise ValueError(f"base and novel classes overlap: {sorted(overlap)}")
    unknown = (base | novel) - set(dataset.categories)
    if unknown:
        raise ValueError(f"split names unknown categories: {sorted(unknown)}")

    base_queries, novel_queries = [], []
    supports: dict[int, list] = {cid: [] for cid in (base | novel)}
    for iid in dataset.image_ids():
        cats = {a.category_id for a in dataset.images[iid].annotations}
        if cats & base:
            base_queries.append(iid)
        if cats & novel:
            novel_queries.append(iid)
        for ann in dataset.images[iid].annotations:
            if ann.category_id in supports and ann.area >= min_support_area:
                supports[ann.category_id].append(ann)
    return DatasetSplit(dataset=dataset, base_classes=base, novel_classes=novel,
                        base_queries=base_queries, novel_queries=novel_queries,
                        supports_by_class=supports)


@dataclass
class SupportChip:
    """Square support crop: content centered, shorter side zero-padded."""
    pixels: np.ndarray  # (3, S, S) float32, padded region exactly 0
    mask: np.ndarray    # (S, S) bool, True on content
    image_id: int
    box: np.ndarray     # source box xyxy in image coords
    class_id: int


def crop_support(image: np.ndarray, box, class_id: int = 0,
                 image_id: int = -1, chip_size: int = 320) -> SupportChip:
    """Crop `box`, scale its longest side to chip_size, zero-pad the rest."""
    image = np.asarray(image)
    x1, y1, x2, y2 = (float(v) for v in box)
    h_img, w_img = image.shape[1], image.shape[2]
    ix1, iy1 = int(np.floor(max(x1, 0))), int(np.floor(max(y1, 0)))
    ix2, iy2 = int(np.ceil(min(x2, w_img))), int(np.ceil(min(y2, h_img)))
    if ix2 - ix1 < 1 or iy2 - iy1 < 1:
        raise ValueError(f"degenerate box: {box}")
    crop = image[:, iy1:iy2, ix1:ix2]
    ch, cw = crop.shape[1], crop.shape[2]
    s = chip_size
    if ch >= cw:
        oh, ow = s, max(1, int(round(cw * s / ch)))
    else:
        oh, ow = max(1, int(round(ch * s / cw))), s
    with no_grad():
        resized = bilinear_resize(Tensor(crop.astype(np.float32)), (oh, ow)).data
    top = (s - oh) // 2
    left = (s - ow) // 2
    pixels = np.zeros((3, s, s), dtype=np.float32)
    pixels[:, top:top + oh, left:left + ow] = resized
    mask = np.zeros((s, s), dtype=bool)
    mask[top:top + oh, left:left + ow] = True
    return SupportChip(pixels=pixels, mask=mask, image_id=image_id,
                       box=np.array([x1, y1, x2, y2]), class_id=class_id)


class ChipCache:
    """Backbone-ready chips keyed by annotation id; built once, reused."""

    def __init__(self, dataset: Dataset, chip_size: int, input_size: int):
        self.dataset = dataset
        self.chip_size = chip_size
        self.input_size = input_size
        self._chips: dict[int, np.ndarray] = {}

    def chip_input(self, ann: Annotation) -> np.ndarray:
        """(3, input_size, input_size) float32 chip for the backbone."""
        if ann.id in self._chips:
            return self._chips[ann.id]
        image = self.dataset.load_image(ann.image_id)
        chip = crop_support(image, ann.box, ann.category_id, ann.image_id,
                            self.chip_size)
        out = chip.pixels
        if self.input_size != self.chip_size:
            with no_grad():
                out = bilinear_resize(Tensor(out),
                                      (self.input_size, self.input_size)).data
        self._chips[ann.id] = out
        return out

    def stack(self, anns) -> np.ndarray:
        return np.stack([self.chip_input(a) for a in anns], axis=0)


@dataclass
class Episode:
    """2-way contrastive training unit: query with positive-class boxes plus
    support chip stacks for the positive class c1 and a distractor c2."""
    query_image: np.ndarray   # (3,H,W) prepared for the backbone
    query_boxes: np.ndarray   # (n,4) xyxy in prepared coords, class c1 only
    c1: int
    c2: int
    chips_c1: np.ndarray      # (k,3,h,w)
    chips_c2: np.ndarray
    seed: int


def prepare_query(image: np.ndarray, max_side: int = 256):
    """Resize so the longer side <= max_side, zero-pad to a multiple of 16.

    Returns (prepared (3,H',W') float32, scale) with box_prepared = box*scale.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[1], image.shape[2]
    scale = 1.0
    if max(h, w) > max_side:
        scale = max_side / max(h, w)
        nh, nw = max(1, int(round(h * scale))), max(1, int(round(w * scale)))
        with no_grad():
            image = bilinear_resize(Tensor(image), (nh, nw)).data
        h, w = nh, nw
    ph = (16 - h % 16) % 16
    pw = (16 - w % 16) % 16
    if ph or pw:
        image = np.pad(image, ((0, 0), (0, ph), (0, pw)))
    return image, scale


def _eligible_classes(split: DatasetSplit, classes, shots: int):
    out = [c for c in sorted(classes)
           if len(split.supports_by_class.get(c, [])) >= shots]
    return out


def sample_supports(split: DatasetSplit, class_id: int, k: int,
                    rng: np.random.Generator, exclude_image: int = -1):
    """Draw k support annotations of a class, never from exclude_image."""
    pool = [a for a in split.supports_by_class.get(class_id, [])
            if a.image_id != exclude_image]
    if len(pool) < k:
        raise ValueError(
            f"class {class_id}: {len(pool)} eligible supports, need {k}")
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def sample_episode(split: DatasetSplit, seed: int, chips: ChipCache,
                   shots: int = 10, query_max_side: int = 256) -> Episode:
    """Deterministic in seed; supports exclude the query image."""
    rng = np.random.default_rng(seed)
    eligible = _eligible_classes(split, split.base_classes, shots)
    if len(eligible) < 2:
        raise ValueError(
            f"need >= 2 base classes with >= {shots} supports, have {len(eligible)}")
    c1 = int(eligible[rng.integers(len(eligible))])

    def supports_outside(class_id: int, image_id: int) -> int:
        return sum(a.image_id != image_id
                   for a in split.supports_by_class.get(class_id, []))

    # Holding out the query image must still leave k supports for c1.
    query_pool = sorted(
        iid for iid in split.base_queries
        if any(a.category_id == c1
               for a in split.dataset.images[iid].annotations)
        and supports_outside(c1, iid) >= shots)
    if not query_pool:
        raise ValueError(f"class {c1}: no usable query images")
    qid = int(query_pool[rng.integers(len(query_pool))])

    others = [c for c in eligible
              if c != c1 and supports_outside(c, qid) >= shots]
    if not others:
        raise ValueError(f"no contrast class available against class {c1}")
    c2 = int(others[rng.integers(len(others))])

    sup1 = sample_supports(split, c1, shots, rng, exclude_image=qid)
    sup2 = sample_supports(split, c2, shots, rng, exclude_image=qid)

    raw = split.dataset.load_image(qid)
    prepared, scale = prepare_query(raw, query_max_side)
    gt = np.stack([a.box for a in split.dataset.images[qid].annotations
                   if a.category_id == c1]) * scale
    return Episode(query_image=prepared, query_boxes=gt, c1=c1, c2=c2,
                   chips_c1=chips.stack(sup1), chips_c2=chips.stack(sup2),
                   seed=seed)
