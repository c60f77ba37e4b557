"""Shot aggregation: reference agreement, algebraic identities, gradients."""

import numpy as np
import pytest

from reldet.autodiff import Tensor
from reldet.aggregation import GLRAggregator, mean_prototype
from reldet.gradcheck import grad_check
from reldet.ops import ShapeError
from reldet.params import ParamSet

from oracles import glr_ref


def shots_tensor(rng, k, c=4, a=3):
    return Tensor(rng.normal(size=(k, c, a, a)).astype(np.float32))


class TestMeanPrototype:
    def test_equals_numpy_mean(self):
        rng = np.random.default_rng(0)
        s = shots_tensor(rng, 5)
        np.testing.assert_allclose(mean_prototype(s).data, s.data.mean(axis=0),
                                   atol=1e-7)

    def test_accepts_list_of_maps(self):
        rng = np.random.default_rng(1)
        feats = [Tensor(rng.normal(size=(4, 3, 3)).astype(np.float32))
                 for _ in range(3)]
        got = mean_prototype(feats).data
        ref = np.stack([f.data for f in feats]).mean(axis=0)
        np.testing.assert_allclose(got, ref, atol=1e-7)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            mean_prototype([])

    def test_mismatched_shapes_rejected(self):
        with pytest.raises(ShapeError):
            mean_prototype([Tensor(np.zeros((4, 3, 3))),
                            Tensor(np.zeros((4, 2, 3)))])


class TestGLR:
    def test_matches_reference(self):
        rng = np.random.default_rng(2)
        glr = GLRAggregator(4, rng)
        s = rng.normal(size=(5, 4, 3, 3))
        e, trace = glr.forward(Tensor(s.astype(np.float32)))
        e_ref, m_ref = glr_ref(glr, s.astype(np.float32))
        np.testing.assert_allclose(e.data, e_ref, atol=1e-5)
        np.testing.assert_allclose(trace.confidence_maps, m_ref, atol=1e-5)

    def test_single_shot_is_identity(self):
        rng = np.random.default_rng(3)
        glr = GLRAggregator(4, rng)
        s = shots_tensor(rng, 1)
        e, trace = glr.forward(s)
        # softmax over one shot is exactly 1 everywhere: e == the shot, bitwise
        np.testing.assert_array_equal(e.data, s.data[0])
        np.testing.assert_array_equal(trace.confidence_maps,
                                      np.ones_like(s.data))

    def test_confidence_maps_sum_to_one(self):
        rng = np.random.default_rng(4)
        glr = GLRAggregator(6, rng)
        _, trace = glr.forward(Tensor(rng.normal(size=(7, 6, 3, 3))
                                      .astype(np.float32)))
        np.testing.assert_allclose(trace.confidence_maps.sum(axis=0), 1.0,
                                   atol=1e-6)

    def test_shot_permutation_invariance(self):
        rng = np.random.default_rng(5)
        glr = GLRAggregator(4, rng)
        s = rng.normal(size=(6, 4, 3, 3)).astype(np.float32)
        e1, _ = glr.forward(Tensor(s))
        perm = rng.permutation(6)
        e2, _ = glr.forward(Tensor(s[perm]))
        np.testing.assert_allclose(e1.data, e2.data, atol=1e-6)

    def test_convex_hull_containment(self):
        # every prototype cell lies within [min, max] of the shots at that cell
        rng = np.random.default_rng(6)
        glr = GLRAggregator(4, rng)
        s = rng.normal(size=(5, 4, 3, 3)).astype(np.float32)
        e, _ = glr.forward(Tensor(s))
        assert np.all(e.data >= s.min(axis=0) - 1e-6)
        assert np.all(e.data <= s.max(axis=0) + 1e-6)

    def test_zero_mlp_reduces_to_mean(self):
        rng = np.random.default_rng(7)
        glr = GLRAggregator(4, rng)
        glr.mlp2_w.data[:] = 0.0
        glr.mlp2_b.data[:] = 0.0
        s = rng.normal(size=(4, 4, 3, 3)).astype(np.float32)
        e, _ = glr.forward(Tensor(s))
        np.testing.assert_allclose(e.data, s.mean(axis=0), atol=1e-6)

    def test_identical_shots_average_to_themselves(self):
        rng = np.random.default_rng(8)
        glr = GLRAggregator(4, rng)
        one = rng.normal(size=(4, 3, 3)).astype(np.float32)
        s = np.stack([one] * 5)
        e, _ = glr.forward(Tensor(s))
        np.testing.assert_allclose(e.data, one, atol=1e-6)

    def test_wrong_channel_count_raises(self):
        glr = GLRAggregator(4, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            glr.forward(Tensor(np.zeros((2, 6, 3, 3), dtype=np.float32)))

    def test_gradients(self):
        rng = np.random.default_rng(9)
        glr = GLRAggregator(4, rng)
        ps = ParamSet(dict(glr.named_parameters()))
        ps["inp.shots"] = Tensor(rng.normal(size=(3, 4, 3, 3)))

        def fn(p):
            e, _ = glr.forward(p["inp.shots"])
            return (e * e).mean()

        assert grad_check(fn, ps) < 1e-5
