"""Tensor construction rules, op forwards, and backward-pass correctness."""

import numpy as np
import pytest

from reldet.autodiff import (Tensor, concat, exp, getitem, grad_enabled, log,
                             matmul, no_grad, relu, reshape, sigmoid, softmax,
                             stack, transpose)

from oracles import softmax_loops


def numgrad(fn, x, eps=1e-6):
    """Central-difference gradient of scalar fn at float64 array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = fn(x.copy())
        flat[i] = old - eps
        lo = fn(x.copy())
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check_op(build, shape, seed, tol=1e-7):
    """Compare autodiff grad of sum(build(x)) against finite differences."""
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=shape)
    t = Tensor(x0.copy(), requires_grad=True)
    out = build(t).sum()
    out.backward()

    def scalar(x):
        return build(Tensor(x)).sum().item()

    num = numgrad(scalar, x0)
    assert np.max(np.abs(t.grad - num)) < tol


class TestConstruction:
    def test_int_input_becomes_float32(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float32

    def test_float64_preserved(self):
        t = Tensor(np.zeros(3, dtype=np.float64))
        assert t.dtype == np.float64

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            Tensor([1.0, np.nan])
        with pytest.raises(ValueError, match="non-finite"):
            Tensor([np.inf])

    def test_backward_requires_scalar(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (t * 2.0).backward()

    def test_detach_cuts_graph(self):
        t = Tensor(np.ones(3), requires_grad=True)
        d = (t * 2.0).detach()
        assert not d.requires_grad and d._parents == ()


class TestForward:
    def test_softmax_matches_reference(self):
        rng = np.random.default_rng(0)
        for axis in (0, 1, 2):
            x = rng.normal(size=(3, 4, 5)) * 10
            got = softmax(Tensor(x), axis=axis).data
            np.testing.assert_allclose(got, softmax_loops(x, axis), atol=1e-12)

    def test_softmax_overflow_safe(self):
        x = Tensor(np.array([1000.0, 1000.0, 999.0]))
        s = softmax(x, axis=0).data
        assert np.isfinite(s).all() and abs(s.sum() - 1.0) < 1e-12

    def test_sigmoid_extremes(self):
        s = sigmoid(Tensor(np.array([-500.0, 0.0, 500.0]))).data
        np.testing.assert_allclose(s, [0.0, 0.5, 1.0], atol=1e-12)

    def test_mean_keepdims(self):
        x = Tensor(np.arange(12.0).reshape(3, 4))
        m = x.mean(axis=1, keepdims=True)
        assert m.shape == (3, 1)
        np.testing.assert_allclose(m.data[:, 0], [1.5, 5.5, 9.5])

    def test_broadcast_add_shapes(self):
        a = Tensor(np.ones((2, 3, 4)))
        b = Tensor(np.ones((3, 1)))
        assert (a + b).shape == (2, 3, 4)


class TestBackward:
    def test_add_broadcast_grad(self):
        check_op(lambda t: t + Tensor(np.ones((4, 1))) * 3.0, (2, 4, 5), 1)

    def test_mul_grad(self):
        rng = np.random.default_rng(2)
        other = rng.normal(size=(4, 5))
        check_op(lambda t: t * Tensor(other), (4, 5), 2)

    def test_matmul_grad_both_sides(self):
        rng = np.random.default_rng(3)
        b0 = rng.normal(size=(4, 3))
        a = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        b = Tensor(b0, requires_grad=True)
        matmul(a, b).sum().backward()
        ga, gb = a.grad.copy(), b.grad.copy()

        num_a = numgrad(lambda x: (Tensor(x).data @ b0).sum(), a.data)
        num_b = numgrad(lambda x: (a.data @ x).sum(), b0)
        assert np.max(np.abs(ga - num_a)) < 1e-8
        assert np.max(np.abs(gb - num_b)) < 1e-8

    def test_relu_exp_log_softmax_grads(self):
        check_op(relu, (3, 4), 4, tol=1e-6)
        check_op(exp, (3, 4), 5, tol=1e-6)
        check_op(lambda t: log(t * t + 1.0), (3, 4), 6)
        check_op(lambda t: softmax(t, axis=1) * Tensor(np.arange(12.0).reshape(3, 4)),
                 (3, 4), 7)

    def test_reshape_transpose_grads(self):
        check_op(lambda t: reshape(t, (6, 2)) * 2.0, (3, 4), 8)
        w = np.arange(24.0).reshape(4, 3, 2)
        check_op(lambda t: transpose(t, (2, 0, 1)) * Tensor(w), (3, 2, 4), 9)

    def test_concat_stack_getitem_grads(self):
        rng = np.random.default_rng(10)
        w = rng.normal(size=(6, 3))
        check_op(lambda t: concat([t, t * 2.0], axis=0) * Tensor(w), (3, 3), 10)
        check_op(lambda t: stack([t, t * t], axis=0).sum(axis=0), (2, 3), 11)
        check_op(lambda t: getitem(t, np.array([0, 2, 2])) * 3.0, (4, 2), 12)

    def test_getitem_repeated_index_accumulates(self):
        t = Tensor(np.ones(3), requires_grad=True)
        getitem(t, np.array([1, 1, 1])).sum().backward()
        np.testing.assert_allclose(t.grad, [0.0, 3.0, 0.0])

    def test_diamond_graph_accumulates_once(self):
        # y = x*x used twice; dy/dx of (u + u) where u = x*x is 4x
        t = Tensor(np.array([3.0]), requires_grad=True)
        u = t * t
        (u + u).sum().backward()
        np.testing.assert_allclose(t.grad, [12.0])

    def test_mean_grad_scaling(self):
        t = Tensor(np.ones((2, 5)), requires_grad=True)
        t.mean().backward()
        np.testing.assert_allclose(t.grad, np.full((2, 5), 0.1))


class TestNoGrad:
    def test_no_grad_blocks_graph(self):
        t = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            assert not grad_enabled()
            u = t * 2.0
        assert u._parents == () and u._backward is None

    def test_no_grad_restores_on_exit(self):
        with no_grad():
            pass
        assert grad_enabled()

    def test_no_grad_restores_on_exception(self):
        with pytest.raises(RuntimeError):
            with no_grad():
                raise RuntimeError("boom")
        assert grad_enabled()
