"""Box geometry: IoU, greedy NMS, anchor grids, and delta coding.

Boxes are (x1, y1, x2, y2) in image-pixel coordinates, rows of float arrays.
Delta coding follows the standard parametrization: center offsets scaled by
anchor size, log-scaled width/height.
"""

from __future__ import annotations

import numpy as np

# exp() argument cap for decoded sizes; prevents overflow on wild deltas
SCALE_CLAMP = float(np.log(1000.0 / 16.0))


def box_area(boxes: np.ndarray) -> np.ndarray:
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N,4) and (M,4) boxes -> (N,M)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = box_area(a)[:, None] + box_area(b)[None, :] - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-12), 0.0)


def iou(a, b) -> float:
    """IoU of two single boxes."""
    return float(iou_matrix(np.asarray(a)[None], np.asarray(b)[None])[0, 0])


def nms(boxes: np.ndarray, scores: np.ndarray, thresh: float) -> np.ndarray:
    """Greedy descending-score suppression at IoU > thresh.

    Ties are broken by lower original index. Returns kept indices in the
    order they were selected.
    """
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    scores = np.asarray(scores, dtype=np.float64)
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores must have equal length")
    if len(boxes) == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.argsort(-scores, kind="stable")
    kept = []
    while order.size:
        i = order[0]
        kept.append(i)
        if order.size == 1:
            break
        rest = order[1:]
        ious = iou_matrix(boxes[i][None], boxes[rest])[0]
        order = rest[ious <= thresh]
    return np.asarray(kept, dtype=np.int64)


def generate_anchors(fshape, stride: int, scales, ratios) -> np.ndarray:
    """Dense anchor grid for a (H_f, W_f) feature map.

    Anchor at cell (i, j) is centered at ((j+0.5)*stride, (i+0.5)*stride);
    for scale s and ratio r its width is s/sqrt(r) and height s*sqrt(r).
    Returns (H_f*W_f*A, 4) with cell-major, then scale-major, then ratio
    ordering; A = len(scales)*len(ratios).
    """
    hf, wf = int(fshape[0]), int(fshape[1])
    scales = np.asarray(scales, dtype=np.float64)
    ratios = np.asarray(ratios, dtype=np.float64)
    if scales.size == 0 or ratios.size == 0:
        raise ValueError("scales and ratios must be nonempty")
    ws = (scales[:, None] / np.sqrt(ratios)[None, :]).reshape(-1)  # (A,)
    hs = (scales[:, None] * np.sqrt(ratios)[None, :]).reshape(-1)
    cx = (np.arange(wf) + 0.5) * stride
    cy = (np.arange(hf) + 0.5) * stride
    cxg, cyg = np.meshgrid(cx, cy)  # (hf, wf)
    centers = np.stack([cxg, cyg], axis=-1)[:, :, None, :]  # (hf, wf, 1, 2)
    half = np.stack([ws, hs], axis=-1)[None, None, :, :] * 0.5  # (1,1,A,2)
    lo = centers - half
    hi = centers + half
    return np.concatenate([lo, hi], axis=-1).reshape(-1, 4)


def encode_deltas(boxes: np.ndarray, anchors: np.ndarray) -> np.ndarray:
    """Regression targets (dx,dy,dw,dh) carrying each anchor onto its box."""
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    bcx = boxes[:, 0] + 0.5 * bw
    bcy = boxes[:, 1] + 0.5 * bh
    return np.stack([(bcx - acx) / aw, (bcy - acy) / ah,
                     np.log(bw / aw), np.log(bh / ah)], axis=1)


def decode_boxes(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Apply (dx,dy,dw,dh) deltas to anchors; inverse of encode_deltas."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=np.float64))
    deltas = np.atleast_2d(np.asarray(deltas, dtype=np.float64))
    if anchors.shape[0] != deltas.shape[0]:
        raise ValueError("anchor and delta counts must match")
    if not np.all(np.isfinite(deltas)):
        raise ValueError("non-finite deltas")
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + 0.5 * aw
    acy = anchors[:, 1] + 0.5 * ah
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = aw * np.exp(np.minimum(deltas[:, 2], SCALE_CLAMP))
    h = ah * np.exp(np.minimum(deltas[:, 3], SCALE_CLAMP))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def clip_boxes(boxes: np.ndarray, height: float, width: float) -> np.ndarray:
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64)).copy()
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0, width)
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0, height)
    return boxes
