"""Detection head: prototype relation embedding, box regression, and the
three-branch relation classifier.

The embedding residually injects prototype information into each proposal
feature before regression; classification scores a proposal against the
prototype through global, local, and patch comparisons whose logits sum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tensor, concat, relu, reshape, sigmoid, stack
from .params import Module, he_init, zeros_init
from .relation import SpatialRelation


@dataclass
class Detection:
    """One scored box in image-pixel coordinates."""
    box: np.ndarray  # (4,) xyxy
    class_id: int
    score: float


class PREHead(Module):
    """l = p + R_s(p, e) with a learned 3x3 relation kernel (residual)."""

    def __init__(self, channels: int, proto_size: int,
                 rng: np.random.Generator | None = None):
        super().__init__()
        self.spatial = SpatialRelation(channels, b_hw=(proto_size, proto_size),
                                       kernel_size=3, mode="learned", rng=rng)

    def forward(self, p: Tensor, e: Tensor) -> Tensor:
        if p.shape != e.shape:
            raise ops.ShapeError(f"shape mismatch: p {p.shape} vs e {e.shape}")
        return p + self.spatial.forward(p, e)

    def forward_many(self, p_batch: Tensor, e: Tensor) -> Tensor:
        """(P,C,a,a) proposals against one prototype; kernel computed once."""
        return p_batch + self.spatial.forward_many(p_batch, e)


class Regressor(Module):
    """Flattened embedding -> hidden rectifier layer -> 4 box deltas."""

    def __init__(self, channels: int, proto_size: int, hidden: int = 128,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        flat = channels * proto_size * proto_size
        self.w1 = he_init(rng, (hidden, flat), flat)
        self.b1 = zeros_init((hidden,))
        self.w2 = he_init(rng, (4, hidden), hidden)
        self.b2 = zeros_init((4,))

    def forward(self, l: Tensor) -> Tensor:
        """l: (C,a,a) -> (4,) or (P,C,a,a) -> (P,4)."""
        batched = l.ndim == 4
        flat = reshape(l, (l.shape[0], -1)) if batched else reshape(l, (-1,))
        h = relu(ops.linear(flat, self.w1, self.b1))
        return ops.linear(h, self.w2, self.b2)


class Classifier(Module):
    """Three-branch relation classifier; branch logits sum, then logistic.

    global: spatially pooled p and e are merged by a half-tied first layer
    (equivalent to an MLP on their concatenation with tied halves, making
    this branch symmetric in p and e) -> hidden -> 1 logit.
    local: p is depthwise-correlated with e's 1x1 global-average kernel,
    pooled, and mapped linearly to 1 logit.
    patch: p and e are concatenated along channels, passed through two 3x3
    convs with rectifiers, pooled, and mapped linearly to 1 logit.
    """

    def __init__(self, channels: int, patch_width: int = 32,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        c, w = channels, patch_width
        self.channels = c
        self.glob_w1 = he_init(rng, (c, c), c)
        self.glob_b1 = zeros_init((c,))
        self.glob_w2 = he_init(rng, (1, c), c)
        self.glob_b2 = zeros_init((1,))
        self.loc_w = he_init(rng, (1, c), c)
        self.loc_b = zeros_init((1,))
        self.patch_w1 = he_init(rng, (w, 2 * c, 3, 3), 2 * c * 9)
        self.patch_b1 = zeros_init((w,))
        self.patch_w2 = he_init(rng, (w, w, 3, 3), w * 9)
        self.patch_b2 = zeros_init((w,))
        self.patch_lin_w = he_init(rng, (1, w), w)
        self.patch_lin_b = zeros_init((1,))

    def global_logit(self, p: Tensor, e: Tensor) -> Tensor:
        u = ops.global_avg_pool(p) + ops.global_avg_pool(e)
        h = relu(ops.linear(u, self.glob_w1, self.glob_b1))
        return ops.linear(h, self.glob_w2, self.glob_b2)

    def local_logit(self, p: Tensor, e: Tensor) -> Tensor:
        kern = e.mean(axis=(-2, -1)).reshape(self.channels, 1, 1)
        v = ops.global_avg_pool(p * kern)
        return ops.linear(v, self.loc_w, self.loc_b)

    def patch_logit(self, p: Tensor, e: Tensor) -> Tensor:
        ch_axis = p.ndim - 3
        cat = concat([p, e], axis=ch_axis)
        h = relu(ops.conv2d(cat, self.patch_w1, self.patch_b1, stride=1, pad=1))
        h = relu(ops.conv2d(h, self.patch_w2, self.patch_b2, stride=1, pad=1))
        return ops.linear(ops.global_avg_pool(h), self.patch_lin_w, self.patch_lin_b)

    def logit(self, p: Tensor, e: Tensor) -> Tensor:
        """p: (C,a,a) -> scalar logit; (P,C,a,a) with e (C,a,a) -> (P,)."""
        if p.shape[-3:] != e.shape[-3:]:
            raise ops.ShapeError(f"shape mismatch: p {p.shape} vs e {e.shape}")
        if p.ndim == 4:
            e_tiled = stack([e] * p.shape[0], axis=0)
            z = (self.global_logit(p, e_tiled) + self.local_logit(p, e)
                 + self.patch_logit(p, e_tiled))
            return reshape(z, (-1,))
        z = self.global_logit(p, e) + self.local_logit(p, e) + self.patch_logit(p, e)
        return reshape(z, ())

    def forward(self, p: Tensor, e: Tensor) -> Tensor:
        """Match score in [0, 1]."""
        return sigmoid(self.logit(p, e))
