"""Finite-difference verification of analytic gradients.

Gradients are compared against central differences at float64; the relative
error divides by max(|analytic|, |numeric|, 1.0) so near-zero gradients are
judged on absolute error.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, no_grad
from .params import ParamSet


def grad_check(fn, inputs: ParamSet, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    fn: callable taking the ParamSet and returning a scalar Tensor.
    Every tensor in `inputs` should be float64 with requires_grad=True.
    """
    for k, t in inputs.items():
        if t.data.dtype != np.float64:
            t.data = t.data.astype(np.float64)
        t.requires_grad = True
    inputs.zero_grad()
    out = fn(inputs)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ValueError("fn must return a scalar tensor")
    if not np.isfinite(out.data).all():
        raise ValueError("fn returned a non-finite value")
    out.backward()

    worst = 0.0
    for k, t in inputs.items():
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                hi = float(fn(inputs).data)
                flat[i] = orig - eps
                lo = float(fn(inputs).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            a = analytic.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
            worst = max(worst, rel)
    return worst
