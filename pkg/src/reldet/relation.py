"""Class-agnostic relation operators.

Spatial relation: distill one feature map into a per-channel kernel and
depth-wise correlate the other map with it. Channel relation: fuse two
equal-shape maps by concat-convolution plus a concatenated pair of
half-width projections.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Tensor, concat, relu
from .params import Module, he_init, zeros_init


class SpatialRelation(Module):
    """R_s(A, B) = A depthwise-correlated with a kernel distilled from B.

    In "learned" mode the kernel is MLP(Flatten(Conv(B))) reshaped to
    (C, k, k); Conv keeps B's spatial size so the flatten width is fixed at
    construction. In "fixed_average" mode the kernel is exactly the spatial
    global average of B per channel (a C x 1 x 1 kernel, no parameters).
    """

    def __init__(self, channels: int, b_hw=None, kernel_size: int = 1,
                 mode: str = "learned", rng: np.random.Generator | None = None):
        super().__init__()
        if mode not in ("learned", "fixed_average"):
            raise ValueError(f"unknown spatial-relation mode: {mode}")
        self.mode = mode
        self.channels = channels
        self.kernel_size = 1 if mode == "fixed_average" else int(kernel_size)
        if self.kernel_size not in (1, 3):
            raise ValueError("kernel_size must be 1 or 3")
        if mode == "learned":
            if b_hw is None:
                raise ValueError("learned mode needs the spatial size of B")
            if rng is None:
                rng = np.random.default_rng(0)
            c, ks = channels, self.kernel_size
            bh, bw = int(b_hw[0]), int(b_hw[1])
            flat = c * bh * bw
            self.b_hw = (bh, bw)
            self.conv_w = he_init(rng, (c, c, ks, ks), c * ks * ks)
            self.conv_b = zeros_init((c,))
            self.mlp_w1 = he_init(rng, (c, flat), flat)
            self.mlp_b1 = zeros_init((c,))
            self.mlp_w2 = he_init(rng, (ks * ks * c, c), c)
            self.mlp_b2 = zeros_init((ks * ks * c,))

    def kernel(self, b: Tensor) -> Tensor:
        """Distill B into the (C, k, k) depthwise kernel."""
        c = self.channels
        if b.shape[0] != c:
            raise ops.ShapeError(f"B has {b.shape[0]} channels, expected {c}")
        if self.mode == "fixed_average":
            return b.mean(axis=(1, 2)).reshape(c, 1, 1)
        if b.shape[1:] != self.b_hw:
            raise ops.ShapeError(
                f"B spatial size {b.shape[1:]} != configured {self.b_hw}")
        ks = self.kernel_size
        z = ops.conv2d(b, self.conv_w, self.conv_b, stride=1, pad=ks // 2)
        h = relu(ops.linear(z.reshape(-1), self.mlp_w1, self.mlp_b1))
        k = ops.linear(h, self.mlp_w2, self.mlp_b2)
        return k.reshape(c, ks, ks)

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[0] != b.shape[0]:
            raise ops.ShapeError(
                f"channel mismatch: A {a.shape[0]} vs B {b.shape[0]}")
        k = self.kernel(b)
        return ops.depthwise_correlate(a, k, pad=self.kernel_size // 2)

    def forward_many(self, a_batch: Tensor, b: Tensor) -> Tensor:
        """Apply R_s(., B) to a (P, C, H, W) stack with one shared kernel."""
        k = self.kernel(b)
        return ops.depthwise_correlate_batch(a_batch, k, pad=self.kernel_size // 2)


class ChannelRelation(Module):
    """R_c(A, B) = Conv(Cat(A,B)) + Cat(Conv(A), Conv(B)).

    conv_cat is a 3x3 conv 2C -> C (pad 1); the inner convs are 1x1 C -> C/2
    so their concatenation matches conv_cat's width. C must be even.
    """

    def __init__(self, channels: int, rng: np.random.Generator | None = None):
        super().__init__()
        if channels % 2 != 0:
            raise ValueError(f"channel relation needs even channels, got {channels}")
        if rng is None:
            rng = np.random.default_rng(0)
        c = channels
        self.channels = c
        self.cat_w = he_init(rng, (c, 2 * c, 3, 3), 2 * c * 9)
        self.cat_b = zeros_init((c,))
        self.a_w = he_init(rng, (c // 2, c, 1, 1), c)
        self.a_b = zeros_init((c // 2,))
        self.b_w = he_init(rng, (c // 2, c, 1, 1), c)
        self.b_b = zeros_init((c // 2,))

    def forward(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ops.ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
        if a.shape[-3] != self.channels:
            raise ops.ShapeError(
                f"expected {self.channels} channels, got {a.shape[-3]}")
        ch_axis = a.ndim - 3
        cat = concat([a, b], axis=ch_axis)
        fused = ops.conv2d(cat, self.cat_w, self.cat_b, stride=1, pad=1)
        pa = ops.conv2d(a, self.a_w, self.a_b)
        pb = ops.conv2d(b, self.b_w, self.b_b)
        return fused + concat([pa, pb], axis=ch_axis)
