"""Shot aggregation: build one class prototype from k support descriptors.

Each shot is scored against the shot-mean through the channel relation; a
per-location softmax over the shot axis turns the scores into confidence
maps that sum to one, and the prototype is the confidence-weighted sum of
the raw shot features. With a single shot this is exactly the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .autodiff import Tensor, relu, softmax, stack
from .params import Module, he_init, zeros_init
from .relation import ChannelRelation


@dataclass
class AggregationTrace:
    """Per-shot channel-relation features and confidence maps (numpy)."""
    relation_feats: np.ndarray  # (k, C, a, a)
    confidence_maps: np.ndarray  # (k, C, a, a); sums to 1 over axis 0


@dataclass
class ClassPrototype:
    """Aggregated class exemplar plus the per-scale proposal-guidance kernels."""
    e: Tensor                      # (C4, a, a)
    scs_kernels: tuple             # (g2, g3, g4), each (C,1,1)
    class_id: int
    k: int
    trace: AggregationTrace | None = field(default=None, repr=False)


def _as_stack(support_feats) -> Tensor:
    if isinstance(support_feats, Tensor):
        if support_feats.ndim != 4:
            raise ops.ShapeError(
                f"expected (k,C,a,a) stack, got {support_feats.shape}")
        if support_feats.shape[0] == 0:
            raise ValueError("empty support list")
        return support_feats
    feats = list(support_feats)
    if not feats:
        raise ValueError("empty support list")
    shapes = {f.shape for f in feats}
    if len(shapes) != 1:
        raise ops.ShapeError(f"support shapes differ: {sorted(shapes)}")
    return stack(feats, axis=0)


def mean_prototype(support_feats) -> Tensor:
    """Arithmetic mean over shots; the baseline aggregation."""
    return _as_stack(support_feats).mean(axis=0)


class GLRAggregator(Module):
    """Confidence-weighted shot aggregation.

    conv: 3x3 per-shot feature transform; the channel relation compares each
    transformed shot with the shot mean; a per-location 1x1-conv MLP maps the
    relation feature to logits, softmaxed over the shot axis.
    """

    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        super().__init__()
        if rng is None:
            rng = np.random.default_rng(0)
        c = channels
        self.channels = c
        self.conv_w = he_init(rng, (c, c, 3, 3), c * 9)
        self.conv_b = zeros_init((c,))
        self.channel_rel = ChannelRelation(c, rng)
        self.mlp1_w = he_init(rng, (c, c, 1, 1), c)
        self.mlp1_b = zeros_init((c,))
        self.mlp2_w = he_init(rng, (c, c, 1, 1), c)
        self.mlp2_b = zeros_init((c,))

    def forward(self, support_feats) -> tuple[Tensor, AggregationTrace]:
        """support_feats: list of (C,a,a) Tensors or a (k,C,a,a) stack.

        Returns (e, trace) with e of shape (C,a,a).
        """
        shots = _as_stack(support_feats)
        k = shots.shape[0]
        if shots.shape[1] != self.channels:
            raise ops.ShapeError(
                f"expected {self.channels} channels, got {shots.shape[1]}")
        z = ops.conv2d(shots, self.conv_w, self.conv_b, stride=1, pad=1)
        z_mean = z.mean(axis=0)
        f = self.channel_rel.forward(z, stack([z_mean] * k, axis=0))
        h = relu(ops.conv2d(f, self.mlp1_w, self.mlp1_b))
        logits = ops.conv2d(h, self.mlp2_w, self.mlp2_b)
        m = softmax(logits, axis=0)
        e = (shots * m).sum(axis=0)
        trace = AggregationTrace(relation_feats=f.data.copy(),
                                 confidence_maps=m.data.copy())
        return e, trace
