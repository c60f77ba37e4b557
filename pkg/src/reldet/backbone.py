"""Multi-stage convolutional backbone producing a three-scale feature pyramid.

Each stage is a stride-2 3x3 downsampling conv followed by a residual pair of
3x3 convs, all with rectifier activations. Stages 2, 3, 4 feed the pyramid at
strides 4, 8, 16. The same weights serve query images and support chips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autodiff import Tensor, relu, stack
from .params import Module, ModuleList, he_init, zeros_init


@dataclass
class PyramidFeatures:
    """Features at strides (4, 8, 16); shapes (C2,H/4,W/4) etc."""
    f2: Tensor
    f3: Tensor
    f4: Tensor
    strides: tuple = (4, 8, 16)


class _Stage(Module):
    """Downsample conv + residual pair: y = relu(z + conv2(relu(conv1(z))))."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        super().__init__()
        self.down_w = he_init(rng, (c_out, c_in, 3, 3), c_in * 9)
        self.down_b = zeros_init((c_out,))
        self.r1_w = he_init(rng, (c_out, c_out, 3, 3), c_out * 9)
        self.r1_b = zeros_init((c_out,))
        self.r2_w = he_init(rng, (c_out, c_out, 3, 3), c_out * 9)
        self.r2_b = zeros_init((c_out,))

    def forward(self, x: Tensor) -> Tensor:
        z = relu(ops.conv2d(x, self.down_w, self.down_b, stride=2, pad=1))
        r = relu(ops.conv2d(z, self.r1_w, self.r1_b, stride=1, pad=1))
        r = ops.conv2d(r, self.r2_w, self.r2_b, stride=1, pad=1)
        return relu(z + r)


class Backbone(Module):
    """Four stages; widths from config (desk default 16, 32, 64, 128)."""

    def __init__(self, widths=(16, 32, 64, 128), norm_mean=0.5, norm_std=0.5,
                 rng: np.random.Generator | None = None):
        super().__init__()
        if len(widths) < 4:
            raise ValueError("backbone needs at least 4 stage widths")
        if any(w % 2 for w in widths):
            raise ValueError(f"stage widths must be even, got {widths}")
        if rng is None:
            rng = np.random.default_rng(0)
        self.widths = tuple(int(w) for w in widths)
        self.norm_mean = float(norm_mean)
        self.norm_std = float(norm_std)
        stages = []
        c_in = 3
        for w in self.widths:
            stages.append(_Stage(c_in, w, rng))
            c_in = w
        self.stages = ModuleList(stages)

    @property
    def pyramid_channels(self):
        """(C2, C3, C4) for the three emitted scales."""
        return self.widths[1], self.widths[2], self.widths[3]

    def _check_size(self, shape):
        h, w = shape[-2], shape[-1]
        if h % 16 or w % 16:
            raise ValueError(
                f"input size {h}x{w} not divisible by 16; pad the image first")

    def forward(self, image: Tensor) -> PyramidFeatures:
        """image: (3,H,W) or (N,3,H,W), values in [0,1]; H,W divisible by 16."""
        self._check_size(image.shape)
        x = (image - self.norm_mean) * (1.0 / self.norm_std)
        outs = []
        for stage in self.stages:
            x = stage.forward(x)
            outs.append(x)
        return PyramidFeatures(f2=outs[1], f3=outs[2], f4=outs[3])

    extract = forward


def pool_support(feat: PyramidFeatures, a: int = 7):
    """Support-chip summary: per-scale global-average kernels plus the deep
    a x a descriptor pooled from f4 over the full chip extent.

    Returns (g2, g3, g4, deep) with g* of shape (C,1,1) and deep (C4,a,a).
    Accepts a batched pyramid ((k,C,H,W) maps), returning (k,C,1,1) kernels
    and a (k,C4,a,a) stack.
    """
    batched = feat.f4.ndim == 4
    g2 = feat.f2.mean(axis=(-2, -1), keepdims=True)
    g3 = feat.f3.mean(axis=(-2, -1), keepdims=True)
    g4 = feat.f4.mean(axis=(-2, -1), keepdims=True)
    stride = feat.strides[2]
    if not batched:
        h, w = feat.f4.shape[1] * stride, feat.f4.shape[2] * stride
        deep = ops.roi_align(feat.f4, np.array([0.0, 0.0, w, h]), stride, a)
        return g2, g3, g4, deep
    h, w = feat.f4.shape[2] * stride, feat.f4.shape[3] * stride
    box = np.array([0.0, 0.0, w, h])
    deep = stack([ops.roi_align(feat.f4[i], box, stride, a)
                  for i in range(feat.f4.shape[0])], axis=0)
    return g2, g3, g4, deep
