"""Bundled synthetic-shapes dataset: colored shapes on textured backgrounds.

Seven classes — five base, two held out as novel — drawn as filled or
outlined polygons with tight boxes, written as PNG images plus a COCO-style
annotation file. Everything is deterministic in the seed.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

BASE_CLASS_IDS = [1, 2, 3, 4, 5]
NOVEL_CLASS_IDS = [6, 7]

_CLASSES = {
    1: ("red-disk", (219, 44, 41)),
    2: ("green-square", (52, 199, 73)),
    3: ("blue-triangle", (58, 94, 228)),
    4: ("yellow-bar", (238, 219, 52)),
    5: ("magenta-ring", (214, 61, 216)),
    6: ("cyan-cross", (64, 217, 214)),
    7: ("orange-diamond", (243, 148, 42)),
}


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth random blotches plus mild pixel noise, in [0,1], (H,W,3)."""
    low = rng.uniform(0.08, 0.45, size=(6, 6, 3))
    img = np.asarray(Image.fromarray((low * 255).astype(np.uint8))
                     .resize((size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    img = img + rng.normal(0, 0.02, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _jitter(rng, color):
    return tuple(int(np.clip(c + rng.integers(-18, 19), 0, 255)) for c in color)


def _draw_instance(draw: ImageDraw.ImageDraw, cid: int, cx: int, cy: int,
                   r: int, color) -> tuple:
    """Draw one shape of class cid centered at (cx,cy) with half-extent r.

    Returns the tight box (x1,y1,x2,y2). Drawing covers pixel coordinates
    inclusively, so the exclusive-convention box ends one past the last
    painted pixel.
    """
    if cid == 1:
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=color)
        return (cx - r, cy - r, cx + r + 1, cy + r + 1)
    if cid == 2:
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=color)
        return (cx - r, cy - r, cx + r + 1, cy + r + 1)
    if cid == 3:
        pts = [(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)]
        draw.polygon(pts, fill=color)
        return (cx - r, cy - r, cx + r + 1, cy + r + 1)
    if cid == 4:
        hh = max(3, r // 2)  # 2:1 wide bar
        draw.rectangle([cx - r, cy - hh, cx + r, cy + hh], fill=color)
        return (cx - r, cy - hh, cx + r + 1, cy + hh + 1)
    if cid == 5:
        width = max(3, r // 3)
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=color, width=width)
        return (cx - r, cy - r, cx + r + 1, cy + r + 1)
    if cid == 6:
        t = max(3, int(r * 0.35))
        draw.rectangle([cx - r, cy - t, cx + r, cy + t], fill=color)
        draw.rectangle([cx - t, cy - r, cx + t, cy + r], fill=color)
        return (cx - r, cy - r, cx + r + 1, cy + r + 1)
    if cid == 7:
        pts = [(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)]
        draw.polygon(pts, fill=color)
        return (cx - r, cy - r, cx + r + 1, cy + r + 1)
    raise ValueError(f"unknown class id {cid}")


def generate(out_dir, images_per_class: int = 30, image_size: int = 96,
             seed: int = 0, max_instances: int = 2) -> Path:
    """Write images/ and annotations.json under out_dir; returns the
    annotation path. Each image holds 1..max_instances objects of one class.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    s = image_size
    r_lo, r_hi = max(8, int(s * 0.13)), max(12, int(s * 0.27))

    images_json, anns_json = [], []
    img_id, ann_id = 0, 0
    for cid in sorted(_CLASSES):
        name, color = _CLASSES[cid]
        for _ in range(images_per_class):
            img_id += 1
            bg = _background(rng, s)
            pil = Image.fromarray((bg * 255).astype(np.uint8))
            draw = ImageDraw.Draw(pil)
            n_inst = int(rng.integers(1, max_instances + 1))
            placed = []
            for _ in range(n_inst):
                for _attempt in range(20):
                    r = int(rng.integers(r_lo, r_hi + 1))
                    cx = int(rng.integers(r + 2, s - r - 2))
                    cy = int(rng.integers(r + 2, s - r - 2))
                    cand = (cx - r, cy - r, cx + r, cy + r)
                    if all(_boxes_overlap(cand, p) < 0.05 for p in placed):
                        break
                else:
                    continue
                box = _draw_instance(draw, cid, cx, cy, r, _jitter(rng, color))
                placed.append(box)
                ann_id += 1
                x1, y1, x2, y2 = (float(v) for v in box)
                anns_json.append({
                    "id": ann_id, "image_id": img_id, "category_id": cid,
                    "bbox": [x1, y1, x2 - x1, y2 - y1],
                    "area": (x2 - x1) * (y2 - y1), "iscrowd": 0,
                })
            file_name = f"images/img_{img_id:05d}.png"
            pil.save(out / file_name)
            images_json.append({"id": img_id, "file_name": file_name,
                                "width": s, "height": s})

    doc = {
        "info": {"description": "synthetic shapes",
                 "base_class_ids": BASE_CLASS_IDS,
                 "novel_class_ids": NOVEL_CLASS_IDS,
                 "seed": seed},
        "images": images_json,
        "annotations": anns_json,
        "categories": [{"id": cid, "name": _CLASSES[cid][0]}
                       for cid in sorted(_CLASSES)],
    }
    ann_path = out / "annotations.json"
    ann_path.write_text(json.dumps(doc))
    return ann_path


def _boxes_overlap(a, b) -> float:
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / max(1e-9, area_a + area_b - inter)
