"""Neural-net operations built on the autodiff engine.

Convolutions use im2col + BLAS matmul forward; input gradients are computed
as a transposed convolution (dilate, pad, correlate with the spatially
flipped kernel), so the backward pass is also matmul-bound.

Shape conventions: single items are (C, H, W); a leading batch axis
(N, C, H, W) is accepted by conv2d / avg_pool2 / bilinear_resize and is
vectorized, with per-item results identical to the unbatched call.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, _as_tensor, _make


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


def _require(cond: bool, msg: str):
    if not cond:
        raise ShapeError(msg)


# -- convolution ---------------------------------------------------------------


def _im2col(xd: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(N,C,H,W) -> column matrix (N*Ho*Wo, C*kh*kw) plus output spatial size."""
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _conv2d_raw(xd: np.ndarray, wd: np.ndarray, stride: int, pad: int):
    """Forward cross-correlation on raw arrays; returns (out, cols)."""
    d, c, kh, kw = wd.shape
    cols, ho, wo = _im2col(xd, kh, kw, stride, pad)
    out = cols @ wd.reshape(d, c * kh * kw).T
    n = xd.shape[0]
    return out.reshape(n, ho, wo, d).transpose(0, 3, 1, 2), cols


def _conv2d_input_grad(go: np.ndarray, wd: np.ndarray, in_hw, stride: int, pad: int):
    """Gradient w.r.t. conv input: zero-dilate go, full-correlate flipped kernel."""
    h, w = in_hw
    d, c, kh, kw = wd.shape
    n, _, ho, wo = go.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    if stride > 1:
        gd = np.zeros((n, d, (ho - 1) * stride + 1, (wo - 1) * stride + 1), dtype=go.dtype)
        gd[:, :, ::stride, ::stride] = go
    else:
        gd = go
    # right/bottom shortfall when (hp - kh) is not a stride multiple
    extra_h = hp - (gd.shape[2] + kh - 1)
    extra_w = wp - (gd.shape[3] + kw - 1)
    gd = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1 + extra_h), (kw - 1, kw - 1 + extra_w)))
    w_flip = wd[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (C, D, kh, kw)
    gx, _ = _conv2d_raw(gd, np.ascontiguousarray(w_flip), 1, 0)
    if pad:
        gx = gx[:, :, pad:pad + h, pad:pad + w]
    return gx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip).

    x: (C,H,W) or (N,C,H,W); weight: (D,C,kh,kw); bias: (D,) or None.
    Output spatial size is floor((H + 2*pad - kh)/stride) + 1.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    _require(weight.ndim == 4, f"kernel must be 4-D, got {weight.shape}")
    _require(x.ndim in (3, 4), f"input must be 3-D or 4-D, got {x.shape}")
    _require(stride >= 1 and pad >= 0, "stride must be >=1 and pad >=0")
    d, c, kh, kw = weight.shape
    _require(kh >= 1 and kw >= 1, "kernel size must be >= 1")
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    _require(xd.shape[1] == c,
             f"input channels {xd.shape[1]} != kernel channels {c}")
    _require(xd.shape[2] + 2 * pad >= kh and xd.shape[3] + 2 * pad >= kw,
             "kernel larger than padded input")
    if bias is not None:
        bias = _as_tensor(bias)
        _require(bias.shape == (d,), f"bias must be ({d},), got {bias.shape}")

    out_data, cols = _conv2d_raw(xd, weight.data, stride, pad)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None, None]
    in_hw = (xd.shape[2], xd.shape[3])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gb = g if batched else g[None]
        if bias is not None and bias.requires_grad:
            bias._accumulate(gb.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            gmat = gb.transpose(0, 2, 3, 1).reshape(-1, d)
            weight._accumulate((gmat.T @ cols).reshape(d, c, kh, kw))
        if x.requires_grad:
            gx = _conv2d_input_grad(gb, weight.data, in_hw, stride, pad)
            x._accumulate(gx if batched else gx[0])

    out_data = out_data if batched else out_data[0]
    return _make(out_data, parents, backward)


def depthwise_correlate(x: Tensor, kernel: Tensor, pad: int = 0) -> Tensor:
    """Per-channel 2-D cross-correlation: no channel mixing.

    x: (C,H,W); kernel: (C,kh,kw). Channel c of the output is x[c]
    correlated with kernel[c].
    """
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    _require(x.ndim == 3 and kernel.ndim == 3,
             f"expected 3-D input/kernel, got {x.shape} / {kernel.shape}")
    _require(x.shape[0] == kernel.shape[0],
             f"channel mismatch: input {x.shape[0]} vs kernel {kernel.shape[0]}")
    c, kh, kw = kernel.shape
    _require(x.shape[1] + 2 * pad >= kh and x.shape[2] + 2 * pad >= kw,
             "kernel larger than padded input")

    xd = x.data
    if pad:
        xd = np.pad(xd, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xd, (kh, kw), axis=(1, 2))
    out_data = np.einsum("chwij,cij->chw", win, kernel.data, optimize=True)

    def backward(g):
        if kernel.requires_grad:
            kernel._accumulate(np.einsum("chwij,chw->cij", win, g, optimize=True))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(1, 2))
            k_flip = kernel.data[:, ::-1, ::-1]
            gx = np.einsum("chwij,cij->chw", gwin, k_flip, optimize=True)
            if pad:
                gx = gx[:, pad:pad + x.shape[1], pad:pad + x.shape[2]]
            x._accumulate(gx)

    return _make(out_data, (x, kernel), backward)


def depthwise_correlate_batch(x: Tensor, kernel: Tensor, pad: int = 0) -> Tensor:
    """depthwise_correlate applied to each item of a (P,C,H,W) stack with one
    shared (C,kh,kw) kernel; item p of the output equals the unbatched call."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    _require(x.ndim == 4 and kernel.ndim == 3,
             f"expected 4-D input and 3-D kernel, got {x.shape} / {kernel.shape}")
    _require(x.shape[1] == kernel.shape[0],
             f"channel mismatch: input {x.shape[1]} vs kernel {kernel.shape[0]}")
    c, kh, kw = kernel.shape
    _require(x.shape[2] + 2 * pad >= kh and x.shape[3] + 2 * pad >= kw,
             "kernel larger than padded input")

    xd = x.data
    if pad:
        xd = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xd, (kh, kw), axis=(2, 3))
    out_data = np.einsum("pchwij,cij->pchw", win, kernel.data, optimize=True)

    def backward(g):
        if kernel.requires_grad:
            kernel._accumulate(np.einsum("pchwij,pchw->cij", win, g, optimize=True))
        if x.requires_grad:
            gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))
            k_flip = kernel.data[:, ::-1, ::-1]
            gx = np.einsum("pchwij,cij->pchw", gwin, k_flip, optimize=True)
            if pad:
                gx = gx[:, :, pad:pad + x.shape[2], pad:pad + x.shape[3]]
            x._accumulate(gx)

    return _make(out_data, (x, kernel), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = W x + b for x of shape (n,), or row-wise for x of shape (N, n)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    _require(weight.ndim == 2, f"weight must be 2-D, got {weight.shape}")
    m, n = weight.shape
    _require(x.shape[-1] == n,
             f"input dim {x.shape[-1]} != weight columns {n}")
    _require(x.ndim in (1, 2), f"input must be 1-D or 2-D, got {x.shape}")
    if bias is not None:
        bias = _as_tensor(bias)
        _require(bias.shape == (m,), f"bias must be ({m},), got {bias.shape}")

    out_data = x.data @ weight.data.T
    if bias is not None:
        out_data = out_data + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accumulate(g if g.ndim == 1 else g.sum(axis=0))
        if weight.requires_grad:
            if g.ndim == 1:
                weight._accumulate(np.outer(g, x.data))
            else:
                weight._accumulate(g.T @ x.data)
        if x.requires_grad:
            x._accumulate(g @ weight.data)

    return _make(out_data, parents, backward)


# -- pooling and sampling --------------------------------------------------------


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; spatial sizes must be even."""
    x = _as_tensor(x)
    _require(x.ndim in (3, 4), f"input must be 3-D or 4-D, got {x.shape}")
    h, w = x.shape[-2], x.shape[-1]
    _require(h % 2 == 0 and w % 2 == 0, f"spatial size must be even, got {h}x{w}")
    lead = x.shape[:-2]
    out_data = x.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def backward(g):
        if x.requires_grad:
            gx = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25
            x._accumulate(gx.astype(x.data.dtype))

    return _make(out_data, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """(…,C,H,W) -> (…,C): per-channel spatial mean."""
    return x.mean(axis=(-2, -1))


def _bilinear_gather(fmap: np.ndarray, ys: np.ndarray, xs: np.ndarray):
    """Sample fmap (C,H,W) at continuous pixel-center coords, clamped to border.

    Returns values (C, n) and the index/weight quadruples for backward.
    """
    c, h, w = fmap.shape
    y = np.clip(ys - 0.5, 0.0, h - 1.0)
    x = np.clip(xs - 0.5, 0.0, w - 1.0)
    y0 = np.floor(y).astype(np.int64)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.minimum(y0, h - 2) if h > 1 else np.zeros_like(y0)
    x0 = np.minimum(x0, w - 2) if w > 1 else np.zeros_like(x0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = y - y0
    wx = x - x0
    flat = fmap.reshape(c, h * w)
    idx = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]
    wgt = [(1 - wy) * (1 - wx), (1 - wy) * wx, wy * (1 - wx), wy * wx]
    vals = sum(flat[:, i] * v for i, v in zip(idx, wgt))
    return vals, idx, wgt


def _bilinear_scatter(grad_vals: np.ndarray, idx, wgt, c: int, hw: int,
                      dtype) -> np.ndarray:
    """Adjoint of _bilinear_gather via a single flat bincount."""
    out = np.zeros(c * hw, dtype=np.float64)
    chan_off = (np.arange(c, dtype=np.int64) * hw)[:, None]
    for i, v in zip(idx, wgt):
        big = (chan_off + i[None, :]).ravel()
        out += np.bincount(big, weights=(grad_vals * v[None, :]).ravel(),
                           minlength=c * hw)
    return out.reshape(c, hw).astype(dtype)


def roi_align(fmap: Tensor, boxes, feature_stride: float, out_size: int) -> Tensor:
    """Pool image-coordinate boxes from a feature map into (a, a) grids.

    fmap: (C,H,W); boxes: array-like (4,) or (B,4) of (x1,y1,x2,y2) in image
    pixels. Boxes are divided by feature_stride (no rounding); each output bin
    averages 4 bilinear samples on a regular 2x2 grid inside the bin.
    Returns (C,a,a) for a single box, (B,C,a,a) for a batch.
    """
    fmap = _as_tensor(fmap)
    _require(fmap.ndim == 3, f"feature map must be 3-D, got {fmap.shape}")
    _require(out_size >= 1, "output size must be >= 1")
    barr = np.asarray(boxes, dtype=np.float64)
    single = barr.ndim == 1
    if single:
        barr = barr[None]
    _require(barr.ndim == 2 and barr.shape[1] == 4, f"boxes must be (B,4), got {barr.shape}")
    if np.any(barr[:, 2] <= barr[:, 0]) or np.any(barr[:, 3] <= barr[:, 1]):
        raise ValueError("degenerate box: requires x1 < x2 and y1 < y2")

    a = out_size
    c, h, w = fmap.shape
    fb = barr / float(feature_stride)
    bw = (fb[:, 2] - fb[:, 0]) / a
    bh = (fb[:, 3] - fb[:, 1]) / a
    # sample offsets at 1/4 and 3/4 of each bin
    grid = (np.arange(a)[:, None] + np.array([0.25, 0.75])[None, :]).reshape(-1)  # (2a,)
    ys = fb[:, 1, None] + bh[:, None] * grid[None, :]  # (B, 2a)
    xs = fb[:, 0, None] + bw[:, None] * grid[None, :]
    yy = np.repeat(ys[:, :, None], 2 * a, axis=2)  # (B, 2a, 2a)
    xx = np.repeat(xs[:, None, :], 2 * a, axis=1)
    vals, idx, wgt = _bilinear_gather(fmap.data, yy.ravel(), xx.ravel())
    b = barr.shape[0]
    samples = vals.reshape(c, b, a, 2, a, 2)
    out_data = samples.mean(axis=(3, 5)).transpose(1, 0, 2, 3).astype(fmap.data.dtype)

    def backward(g):
        if not fmap.requires_grad:
            return
        gb = g if not single else g[None]
        gs = np.repeat(np.repeat(gb * 0.25, 2, axis=2), 2, axis=3)  # (B,C,2a,2a)
        gv = gs.transpose(1, 0, 2, 3).reshape(c, -1)
        fmap._accumulate(
            _bilinear_scatter(gv, idx, wgt, c, h * w, fmap.data.dtype).reshape(c, h, w))

    return _make(out_data if not single else out_data[0], (fmap,), backward)


def bilinear_resize(img: Tensor, out_hw) -> Tensor:
    """Resize (…,C,H,W) to (…,C,H2,W2), align-corners-false convention."""
    img = _as_tensor(img)
    _require(img.ndim in (3, 4), f"image must be 3-D or 4-D, got {img.shape}")
    h2, w2 = int(out_hw[0]), int(out_hw[1])
    _require(h2 >= 1 and w2 >= 1, "output size must be >= 1")
    batched = img.ndim == 4
    xd = img.data if batched else img.data[None]
    n, c, h, w = xd.shape
    if (h2, w2) == (h, w):
        out_data = xd.copy()

        def backward_id(g):
            if img.requires_grad:
                img._accumulate(g)

        return _make(out_data if batched else out_data[0], (img,), backward_id)

    ys = (np.arange(h2) + 0.5) * (h / h2)
    xs = (np.arange(w2) + 0.5) * (w / w2)
    yy = np.repeat(ys[:, None], w2, axis=1).ravel()
    xx = np.repeat(xs[None, :], h2, axis=0).ravel()
    flat_in = xd.reshape(n * c, h, w)
    vals, idx, wgt = _bilinear_gather(flat_in, yy, xx)
    out_data = vals.reshape(n, c, h2, w2).astype(xd.dtype)

    def backward(g):
        if not img.requires_grad:
            return
        gb = g if batched else g[None]
        gv = gb.reshape(n * c, h2 * w2)
        gx = _bilinear_scatter(gv, idx, wgt, n * c, h * w, xd.dtype)
        gx = gx.reshape(n, c, h, w)
        img._accumulate(gx if batched else gx[0])

    return _make(out_data if batched else out_data[0], (img,), backward)


# -- losses ----------------------------------------------------------------------


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits (numerically stable).

    Targets are constants; a Tensor target contributes no gradient.
    """
    logits = _as_tensor(logits)
    t = targets.data if isinstance(targets, Tensor) else targets
    t = np.asarray(t, dtype=logits.data.dtype)
    z = logits.data
    out_data = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))

    def backward(g):
        if logits.requires_grad:
            pos = z >= 0
            s = np.empty_like(z)
            s[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            ez = np.exp(z[~pos])
            s[~pos] = ez / (1.0 + ez)
            logits._accumulate(g * (s - t))

    return _make(out_data, (logits,), backward)


def smooth_l1(pred: Tensor, target, beta: float = 1.0) -> Tensor:
    """Elementwise smooth-L1 (Huber): quadratic below beta, linear above.

    Targets are constants; a Tensor target contributes no gradient.
    """
    pred = _as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else target
    t = np.asarray(t, dtype=pred.data.dtype)
    d = pred.data - t
    ad = np.abs(d)
    out_data = np.where(ad < beta, 0.5 * d * d / beta, ad - 0.5 * beta)

    def backward(g):
        if pred.requires_grad:
            pred._accumulate(g * np.clip(d / beta, -1.0, 1.0))

    return _make(out_data, (pred,), backward)
