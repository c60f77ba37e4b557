"""End-to-end detector contracts: prototypes, detection, training forward."""

import numpy as np
import pytest

from conftest import make_tiny_config
from reldet.data import ChipCache, sample_episode
from reldet.losses import compute_losses
from reldet.model import FewShotDetector
from reldet.params import ParamSet


@pytest.fixture(scope="module")
def model():
    return FewShotDetector(make_tiny_config(), rng=np.random.default_rng(3))


def chip_stack(k, seed=0, size=32):
    rng = np.random.default_rng(seed)
    return rng.random((k, 3, size, size)).astype(np.float32)


def query_image(seed=1, h=64, w=80):
    rng = np.random.default_rng(seed)
    return rng.random((3, h, w)).astype(np.float32)


class TestBuildPrototype:
    def test_prototype_contract(self, model):
        proto = model.build_prototype(chip_stack(3), class_id=9)
        assert proto.class_id == 9
        assert proto.k == 3
        assert proto.e.shape == (model.c4, model.proto_size, model.proto_size)
        assert len(proto.scs_kernels) == 3
        assert proto.trace is None

    def test_keep_trace_exposes_confidence_maps(self, model):
        proto = model.build_prototype(chip_stack(4), keep_trace=True)
        assert proto.trace is not None
        maps = proto.trace.confidence_maps
        assert maps.shape[0] == 4
        np.testing.assert_allclose(maps.sum(axis=0), 1.0, atol=1e-6)

    def test_rejects_bad_stack(self, model):
        with pytest.raises(ValueError, match="chip stack"):
            model.build_prototype(chip_stack(1)[0])      # 3-D input
        with pytest.raises(ValueError, match="chip stack"):
            model.build_prototype(np.zeros((0, 3, 32, 32), dtype=np.float32))


class TestDetect:
    def test_detection_contract(self, model):
        supports = {1: chip_stack(2, seed=4), 2: chip_stack(2, seed=5)}
        dets = model.detect(query_image(), supports, max_dets=10)
        assert len(dets) <= 10
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)
        h, w = 64, 80
        for d in dets:
            assert d.class_id in supports
            assert 0.0 <= d.score <= 1.0
            x1, y1, x2, y2 = d.box
            assert 0.0 <= x1 < x2 <= w
            assert 0.0 <= y1 < y2 <= h

    def test_empty_support_set_rejected(self, model):
        bad = {1: np.zeros((0, 3, 32, 32), dtype=np.float32)}
        with pytest.raises(ValueError, match="empty support set"):
            model.detect(query_image(), bad)

    def test_no_prototypes_rejected(self, model):
        with pytest.raises(ValueError, match="no prototypes"):
            model.detect_with_prototypes(query_image(), [])

    def test_detect_is_deterministic(self, model):
        supports = {1: chip_stack(2, seed=6)}
        a = model.detect(query_image(), supports, max_dets=5)
        b = model.detect(query_image(), supports, max_dets=5)
        assert len(a) == len(b)
        for da, db in zip(a, b):
            np.testing.assert_array_equal(da.box, db.box)
            assert da.score == db.score

    def test_detect_never_writes_params(self, model):
        before = model.params().content_hash()
        model.detect(query_image(), {1: chip_stack(2, seed=7)})
        assert model.params().content_hash() == before

    def test_max_dets_merges_across_classes(self, model):
        supports = {c: chip_stack(1, seed=c) for c in (1, 2, 3)}
        many = model.detect(query_image(), supports, max_dets=100)
        few = model.detect(query_image(), supports, max_dets=3)
        assert len(few) == min(3, len(many))
        # the truncation keeps the global top scores, not per-class quotas
        top = sorted((d.score for d in many), reverse=True)[:len(few)]
        assert [d.score for d in few] == top


class TestForwardTrain:
    def test_outputs_align_with_targets(self, model, shapes_split, tiny_cfg):
        chips = ChipCache(shapes_split.dataset, tiny_cfg.data.chip_size,
                          tiny_cfg.data.chip_input_size)
        episode = sample_episode(shapes_split, seed=11, chips=chips, shots=2,
                                 query_max_side=tiny_cfg.data.query_max_side)
        outputs, targets = model.forward_train(episode,
                                               np.random.default_rng(0))
        assert outputs["rpn_obj_logits"].shape[0] == \
            targets["rpn_obj_targets"].shape[0]
        assert outputs["rpn_deltas"].shape == \
            targets["rpn_delta_targets"].shape
        assert outputs["cls_logits_c1"].shape[0] == \
            targets["cls_targets_c1"].shape[0]
        assert outputs["cls_logits_c2"].shape[0] == \
            outputs["cls_logits_c1"].shape[0]
        assert outputs["head_deltas"].shape == \
            targets["head_delta_targets"].shape

        report = compute_losses(outputs, targets)
        assert np.isfinite(report.total_value())
        report.total.backward()
        moved = [n for n, t in model.named_parameters()
                 if t.grad is not None and np.any(t.grad != 0)]
        # gradients reach every component of the model
        for prefix in ("backbone.", "scs.", "rpn.", "glr.", "pre.",
                       "regressor.", "classifier."):
            assert any(n.startswith(prefix) for n in moved), prefix
        model.param_set().zero_grad()


class TestParamsRoundTrip:
    def test_save_load_restores_behavior(self, model, tmp_path):
        supports = {1: chip_stack(2, seed=8)}
        img = query_image(seed=9)
        want = model.detect(img, supports, max_dets=5)

        path = tmp_path / "m.rdp"
        model.params().save(path)
        clone = FewShotDetector(make_tiny_config(),
                                rng=np.random.default_rng(777))
        assert clone.params().content_hash() != model.params().content_hash()
        clone.load_params(ParamSet.load(path))
        assert clone.params().content_hash() == model.params().content_hash()

        got = clone.detect(img, supports, max_dets=5)
        assert len(got) == len(want)
        for a, b in zip(got, want):
            np.testing.assert_array_equal(a.box, b.box)
            assert a.score == b.score
