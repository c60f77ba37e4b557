"""The finite-difference checker itself: catches wrong grads, passes right ones."""

import numpy as np
import pytest

from reldet.autodiff import Tensor, _make, relu
from reldet.gradcheck import grad_check
from reldet.params import ParamSet


def make_ps(**arrays):
    ps = ParamSet()
    for k, v in arrays.items():
        ps[k] = Tensor(np.asarray(v, dtype=np.float64))
    return ps


def test_correct_gradient_passes():
    rng = np.random.default_rng(0)
    ps = make_ps(x=rng.normal(size=(3, 4)), y=rng.normal(size=(3, 4)))
    err = grad_check(lambda p: (p["x"] * p["y"] + relu(p["x"])).sum(), ps)
    assert err < 1e-8


def test_wrong_gradient_detected():
    def bad_double(x):
        # forward 2x but backward pretends 3x
        return _make(x.data * 2.0, (x,),
                     lambda g: x._accumulate(3.0 * g) if x.requires_grad else None)

    ps = make_ps(x=np.array([1.0, 2.0]))
    err = grad_check(lambda p: bad_double(p["x"]).sum(), ps)
    assert err > 0.3


def test_non_scalar_output_rejected():
    ps = make_ps(x=np.ones(3))
    with pytest.raises(ValueError):
        grad_check(lambda p: p["x"] * 2.0, ps)


def test_casts_to_float64():
    ps = ParamSet()
    ps["w"] = Tensor(np.ones(4, dtype=np.float32))
    err = grad_check(lambda p: (p["w"] * p["w"]).sum(), ps)
    assert err < 1e-9


def test_relative_error_scales_with_magnitude():
    # gradient of sum(c*x) is c; large |c| must not inflate the relative error
    ps = make_ps(x=np.array([0.5, -0.25]))
    err = grad_check(lambda p: (p["x"] * 1e6).sum(), ps)
    assert err < 1e-6
