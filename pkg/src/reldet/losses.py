"""Episode losses: RPN objectness/box terms plus contrastive head terms.

The loss path scores sampled anchors and ground-truth boxes, never NMS
outputs, so every term is differentiable and checkable against a scalar
reference. Matching and sampling are plain numpy on constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes as B
from .autodiff import Tensor, concat
from .ops import bce_with_logits, smooth_l1


@dataclass
class AnchorMatch:
    sampled_idx: np.ndarray    # indices into the anchor list (pos then neg)
    obj_targets: np.ndarray    # {0,1} per sampled anchor
    pos_idx: np.ndarray        # sampled positive anchor indices
    delta_targets: np.ndarray  # (len(pos_idx), 4) encode(gt, anchor)


def match_anchors(anchors: np.ndarray, gt_boxes: np.ndarray, pos_iou: float,
                  neg_iou: float, n_samples: int,
                  rng: np.random.Generator) -> AnchorMatch:
    """Label anchors against ground truth and draw a balanced sample.

    Positive: IoU >= pos_iou, or the best-matching anchor of each gt box.
    Negative: IoU <= neg_iou. Up to n_samples//2 positives are drawn, the
    rest filled with negatives up to n_samples total.
    """
    n = anchors.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    matched_gt = np.zeros(n, dtype=np.int64)
    if gt_boxes.size:
        ious = B.iou_matrix(anchors, gt_boxes)  # (N, G)
        max_iou = ious.max(axis=1)
        matched_gt = ious.argmax(axis=1)
        labels[max_iou <= neg_iou] = 0
        labels[max_iou >= pos_iou] = 1
        best_per_gt = ious.argmax(axis=0)
        labels[best_per_gt] = 1
        matched_gt[best_per_gt] = np.arange(gt_boxes.shape[0])
    else:
        labels[:] = 0

    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    n_pos = min(len(pos), n_samples // 2)
    pos_sample = rng.choice(pos, size=n_pos, replace=False) if n_pos else \
        np.zeros(0, dtype=np.int64)
    n_neg = min(len(neg), n_samples - n_pos)
    neg_sample = rng.choice(neg, size=n_neg, replace=False) if n_neg else \
        np.zeros(0, dtype=np.int64)
    sampled = np.concatenate([pos_sample, neg_sample])
    obj_targets = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
    if n_pos:
        delta_targets = B.encode_deltas(gt_boxes[matched_gt[pos_sample]],
                                        anchors[pos_sample])
    else:
        delta_targets = np.zeros((0, 4))
    return AnchorMatch(sampled_idx=sampled, obj_targets=obj_targets,
                       pos_idx=pos_sample, delta_targets=delta_targets)


@dataclass
class HeadSample:
    boxes: np.ndarray          # (M,4) training proposals (anchors + gts)
    cls_targets: np.ndarray    # (M,) {0,1}: box matches a gt at IoU >= thresh
    pos_mask: np.ndarray       # (M,) bool
    delta_targets: np.ndarray  # (sum(pos_mask), 4)


def sample_head_boxes(anchors: np.ndarray, gt_boxes: np.ndarray,
                      pos_iou: float, n_samples: int,
                      rng: np.random.Generator) -> HeadSample:
    """Training proposals for the head: a balanced anchor sample with the
    ground-truth boxes appended as guaranteed positives."""
    if gt_boxes.size:
        ious = B.iou_matrix(anchors, gt_boxes)
        max_iou = ious.max(axis=1)
        matched = ious.argmax(axis=1)
    else:
        max_iou = np.zeros(anchors.shape[0])
        matched = np.zeros(anchors.shape[0], dtype=np.int64)
    pos = np.flatnonzero(max_iou >= pos_iou)
    neg = np.flatnonzero(max_iou < pos_iou)
    n_pos = min(len(pos), n_samples // 2)
    pos_s = rng.choice(pos, size=n_pos, replace=False) if n_pos else \
        np.zeros(0, dtype=np.int64)
    n_neg = min(len(neg), n_samples - n_pos)
    neg_s = rng.choice(neg, size=n_neg, replace=False) if n_neg else \
        np.zeros(0, dtype=np.int64)

    boxes = [anchors[pos_s], anchors[neg_s]]
    cls_t = [np.ones(n_pos), np.zeros(n_neg)]
    deltas = []
    if n_pos:
        deltas.append(B.encode_deltas(gt_boxes[matched[pos_s]], anchors[pos_s]))
    if gt_boxes.size:
        boxes.append(gt_boxes)
        cls_t.append(np.ones(gt_boxes.shape[0]))
        deltas.append(np.zeros((gt_boxes.shape[0], 4)))
    boxes = np.concatenate(boxes, axis=0)
    cls_targets = np.concatenate(cls_t)
    pos_mask = cls_targets > 0.5
    delta_targets = (np.concatenate(deltas, axis=0) if deltas
                     else np.zeros((0, 4)))
    return HeadSample(boxes=boxes, cls_targets=cls_targets, pos_mask=pos_mask,
                      delta_targets=delta_targets)


@dataclass
class LossReport:
    rpn_objectness: float
    rpn_box: float
    cls: float
    box_reg: float
    total: Tensor  # scalar; backward() drives the optimizer

    def total_value(self) -> float:
        return float(self.total.data)

    def as_dict(self) -> dict:
        return {"rpn_objectness": self.rpn_objectness, "rpn_box": self.rpn_box,
                "cls": self.cls, "box_reg": self.box_reg,
                "total": self.total_value()}


def compute_losses(outputs: dict, targets: dict, cfg=None) -> LossReport:
    """Weighted episode loss; all four terms weigh 1.

    outputs (Tensors): rpn_obj_logits (S,), rpn_deltas (P,4),
    cls_logits_c1 (M,), cls_logits_c2 (M,), head_deltas (Mp,4).
    targets (arrays): rpn_obj_targets (S,), rpn_delta_targets (P,4),
    cls_targets_c1 (M,), head_delta_targets (Mp,4). The c2 classification
    target is the zero vector (contrastive negative).

    rpn_objectness and cls are mean cross-entropies over their samples; the
    box terms are smooth-L1 sums normalized by the objectness/classifier
    sample counts, so missing positives contribute exactly 0.
    """
    obj_logits = outputs["rpn_obj_logits"]
    n_rpn = max(1, obj_logits.shape[0])
    rpn_obj = bce_with_logits(obj_logits, targets["rpn_obj_targets"]).sum() \
        * (1.0 / n_rpn)

    rpn_deltas = outputs["rpn_deltas"]
    if rpn_deltas.shape[0]:
        rpn_box = smooth_l1(rpn_deltas, targets["rpn_delta_targets"]).sum() \
            * (1.0 / n_rpn)
    else:
        rpn_box = Tensor(0.0)

    c1 = outputs["cls_logits_c1"]
    c2 = outputs["cls_logits_c2"]
    n_cls = max(1, c1.shape[0] + c2.shape[0])
    cls_logits = concat([c1, c2], axis=0)
    cls_targets = np.concatenate(
        [np.asarray(targets["cls_targets_c1"], dtype=np.float64),
         np.zeros(c2.shape[0])])
    cls = bce_with_logits(cls_logits, cls_targets).sum() * (1.0 / n_cls)

    head_deltas = outputs["head_deltas"]
    if head_deltas.shape[0]:
        box_reg = smooth_l1(head_deltas, targets["head_delta_targets"]).sum() \
            * (1.0 / max(1, c1.shape[0]))
    else:
        box_reg = Tensor(0.0)

    total = rpn_obj + rpn_box + cls + box_reg
    return LossReport(rpn_objectness=float(rpn_obj.data),
                      rpn_box=float(rpn_box.data), cls=float(cls.data),
                      box_reg=float(box_reg.data), total=total)
