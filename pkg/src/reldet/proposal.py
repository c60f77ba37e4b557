"""Support-guided cross-scale fusion and the region proposal network.

The fusion conditions the proposal mechanism on a class: each pyramid scale
is correlated with that class's per-scale support kernel, the two shallower
relation maps are projected to the deep width and pooled down to the deep
grid, fused by the channel relation, and added to the deep relation map.
The RPN scores and regresses dense anchors on the fused map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import boxes as B
from . import ops
from .autodiff import Tensor, relu, reshape, sigmoid, transpose
from .backbone import PyramidFeatures
from .params import Module, he_init, zeros_init
from .relation import ChannelRelation, SpatialRelation


@dataclass
class ProposalSet:
    """Class-conditioned proposals, sorted by objectness descending."""
    boxes: np.ndarray       # (P, 4) image-pixel xyxy, clipped to bounds
    objectness: np.ndarray  # (P,) in [0, 1]
    pooled: Tensor          # (P, C4, a, a) — p^j for each proposal
    class_id: int

    def __len__(self) -> int:
        return self.boxes.shape[0]


class SCSFuse(Module):
    """Cross-scale support-guided fusion producing the RPN input map."""

    def __init__(self, c2: int, c3: int, c4: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        self.rel2 = SpatialRelation(c2, mode="fixed_average")
        self.rel3 = SpatialRelation(c3, mode="fixed_average")
        self.rel4 = SpatialRelation(c4, mode="fixed_average")
        self.proj2_w = he_init(rng, (c4, c2, 1, 1), c2)
        self.proj2_b = zeros_init((c4,))
        self.proj3_w = he_init(rng, (c4, c3, 1, 1), c3)
        self.proj3_b = zeros_init((c4,))
        self.channel_rel = ChannelRelation(c4, rng)

    def forward(self, feats: PyramidFeatures, kernels,
                cross_scale: bool = True) -> Tensor:
        """kernels: (g2, g3, g4) support kernels, each (C,1,1).

        cross_scale=False keeps only the deep-scale relation map (the
        single-scale ablation); parameters exist either way.
        """
        g2, g3, g4 = kernels
        r4 = self.rel4.forward(feats.f4, g4)
        if not cross_scale:
            return r4
        r2 = self.rel2.forward(feats.f2, g2)
        r3 = self.rel3.forward(feats.f3, g3)
        p2 = ops.conv2d(r2, self.proj2_w, self.proj2_b)
        p2 = ops.avg_pool2(ops.avg_pool2(p2))
        p3 = ops.conv2d(r3, self.proj3_w, self.proj3_b)
        p3 = ops.avg_pool2(p3)
        fused = self.channel_rel.forward(p2, p3)
        return fused + r4


class RPNHead(Module):
    """3x3 trunk plus 1x1 objectness and box-delta heads.

    Delta channels are laid out anchor-major: channel 4*a + d holds
    component d of anchor a's delta.
    """

    def __init__(self, channels: int, anchors_per_cell: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        c, na = channels, anchors_per_cell
        self.anchors_per_cell = na
        self.trunk_w = he_init(rng, (c, c, 3, 3), c * 9)
        self.trunk_b = zeros_init((c,))
        self.obj_w = he_init(rng, (na, c, 1, 1), c)
        self.obj_b = zeros_init((na,))
        self.delta_w = he_init(rng, (4 * na, c, 1, 1), c)
        self.delta_b = zeros_init((4 * na,))

    def forward_raw(self, fused: Tensor) -> tuple[Tensor, Tensor]:
        """(objectness logits (A,Hf,Wf), deltas (4A,Hf,Wf))."""
        t = relu(ops.conv2d(fused, self.trunk_w, self.trunk_b, stride=1, pad=1))
        return (ops.conv2d(t, self.obj_w, self.obj_b),
                ops.conv2d(t, self.delta_w, self.delta_b))

    def forward(self, fused: Tensor) -> tuple[Tensor, Tensor]:
        """Objectness after the logistic function, plus deltas."""
        logits, deltas = self.forward_raw(fused)
        return sigmoid(logits), deltas


def flatten_rpn_outputs(obj: Tensor, deltas: Tensor, anchors_per_cell: int):
    """Reorder RPN maps to match generate_anchors' cell-major ordering.

    Returns (obj_flat (N,), deltas_flat (N,4)) with N = Hf*Wf*A.
    """
    na = anchors_per_cell
    hf, wf = obj.shape[1], obj.shape[2]
    obj_flat = reshape(transpose(obj, (1, 2, 0)), (-1,))
    d = reshape(deltas, (na, 4, hf, wf))
    deltas_flat = reshape(transpose(d, (2, 3, 0, 1)), (-1, 4))
    return obj_flat, deltas_flat


def propose(feats: PyramidFeatures, prototype, scs: SCSFuse, rpn: RPNHead,
            anchor_scales, anchor_ratios, proto_size: int,
            pre_nms_top: int = 1000, nms_thresh: float = 0.7,
            post_nms_top: int = 100, min_size: float = 1.0,
            cross_scale: bool = True) -> ProposalSet:
    """Full proposal pipeline for one class prototype.

    scs_fuse -> RPN -> decode -> clip -> top pre_nms_top -> NMS -> top
    post_nms_top -> pool each kept box from f4. Output sorted by
    objectness descending.
    """
    stride = feats.strides[2]
    img_h = feats.f4.shape[-2] * stride
    img_w = feats.f4.shape[-1] * stride
    fused = scs.forward(feats, prototype.scs_kernels, cross_scale=cross_scale)
    obj, deltas = rpn.forward_raw(fused)
    hf, wf = obj.shape[1], obj.shape[2]
    na = rpn.anchors_per_cell
    anchors = B.generate_anchors((hf, wf), stride, anchor_scales, anchor_ratios)

    scores = _sigmoid_np(obj.data.transpose(1, 2, 0).reshape(-1))
    d = deltas.data.reshape(na, 4, hf, wf).transpose(2, 3, 0, 1).reshape(-1, 4)
    decoded = B.clip_boxes(B.decode_boxes(anchors, d), img_h, img_w)
    wh_ok = ((decoded[:, 2] - decoded[:, 0] >= min_size)
             & (decoded[:, 3] - decoded[:, 1] >= min_size))
    idx = np.flatnonzero(wh_ok)
    order = idx[np.argsort(-scores[idx], kind="stable")][:pre_nms_top]
    kept = order[B.nms(decoded[order], scores[order], nms_thresh)][:post_nms_top]

    if kept.size == 0:
        pooled = Tensor(np.zeros((0,) + (feats.f4.shape[0], proto_size, proto_size),
                                 dtype=feats.f4.data.dtype))
        return ProposalSet(boxes=np.zeros((0, 4)), objectness=np.zeros(0),
                           pooled=pooled, class_id=prototype.class_id)
    pooled = ops.roi_align(feats.f4, decoded[kept], stride, proto_size)
    return ProposalSet(boxes=decoded[kept], objectness=scores[kept],
                       pooled=pooled, class_id=prototype.class_id)


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out
