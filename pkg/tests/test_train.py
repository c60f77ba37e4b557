"""Optimizer math, checkpointing, episodic training, and fine-tuning."""

import csv

import numpy as np
import pytest

from conftest import make_tiny_config
from reldet import train as T
from reldet.autodiff import Tensor
from reldet.config import apply_overrides, config_hash, dump_config
from reldet.model import FewShotDetector
from reldet.params import load_params


def param(values):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestSGD:
    def test_plain_step(self):
        p = param([1.0, 2.0])
        opt = T.SGD([("w", p)], lr_fn=lambda n: 0.1, momentum=0.0)
        p.grad = np.array([0.5, -1.0])
        opt.step()
        np.testing.assert_allclose(p.data, [0.95, 2.1], rtol=1e-12)

    def test_momentum_accumulates(self):
        p = param([0.0])
        opt = T.SGD([("w", p)], lr_fn=lambda n: 0.1, momentum=0.9)
        g = np.array([1.0])
        p.grad = g.copy()
        opt.step()                  # v=1.0, w=-0.1
        p.grad = g.copy()
        opt.step()                  # v=1.9, w=-0.1-0.19
        np.testing.assert_allclose(p.data, [-0.29], rtol=1e-12)

    def test_per_name_learning_rates(self):
        pb, ph = param([1.0]), param([1.0])
        opt = T.SGD([("backbone.w", pb), ("head.w", ph)],
                    lr_fn=lambda n: 0.1 if n.startswith("backbone.") else 0.4,
                    momentum=0.0)
        pb.grad = np.array([1.0])
        ph.grad = np.array([1.0])
        opt.step()
        np.testing.assert_allclose(pb.data, [0.9], rtol=1e-12)
        np.testing.assert_allclose(ph.data, [0.6], rtol=1e-12)

    def test_frozen_prefix_excluded(self):
        pb, ph = param([1.0]), param([1.0])
        opt = T.SGD([("backbone.stem.w", pb), ("head.w", ph)],
                    lr_fn=lambda n: 0.5, momentum=0.0,
                    frozen_prefixes=("backbone.",))
        pb.grad = np.array([1.0])
        ph.grad = np.array([1.0])
        opt.step()
        assert pb.data[0] == 1.0     # untouched
        assert ph.data[0] == 0.5
        assert "backbone.stem.w" not in opt.velocity

    def test_grad_clip_rescales_global_norm(self):
        p = param([0.0, 0.0])
        opt = T.SGD([("w", p)], lr_fn=lambda n: 1.0, momentum=0.0,
                    grad_clip=5.0)
        p.grad = np.array([6.0, 8.0])      # norm 10 -> scaled by 0.5
        opt.step()
        np.testing.assert_allclose(p.data, [-3.0, -4.0], rtol=1e-9)

    def test_grad_clip_noop_below_threshold(self):
        p = param([0.0, 0.0])
        opt = T.SGD([("w", p)], lr_fn=lambda n: 1.0, momentum=0.0,
                    grad_clip=100.0)
        p.grad = np.array([6.0, 8.0])
        opt.step()
        np.testing.assert_allclose(p.data, [-6.0, -8.0], rtol=1e-12)

    def test_missing_grad_skipped_and_zero_grad(self):
        p = param([3.0])
        opt = T.SGD([("w", p)], lr_fn=lambda n: 1.0, momentum=0.0)
        opt.step()                  # no grad: no movement
        assert p.data[0] == 3.0
        p.grad = np.array([1.0])
        opt.zero_grad()
        assert p.grad is None


def test_episode_seed_values_and_distinctness():
    assert T.episode_seed(2, 5) == 2 * 1_000_003 + 5
    seen = {T.episode_seed(b, i) for b in range(4) for i in range(100)}
    assert len(seen) == 400


class TestCheckpoint:
    def test_meta_and_round_trip(self, tiny_cfg, tmp_path):
        model = FewShotDetector(tiny_cfg, rng=np.random.default_rng(0))
        path = tmp_path / "ck.rdp"
        saved = T.save_checkpoint(model, tiny_cfg, 7, path)
        loaded = load_params(path)
        assert loaded.meta["arch"] == "reldet"
        assert loaded.meta["iteration"] == "7"
        assert loaded.meta["seed"] == str(tiny_cfg.train.seed)
        assert loaded.meta["config"] == dump_config(tiny_cfg)
        assert loaded.meta["config_hash"] == config_hash(tiny_cfg)
        assert loaded.content_hash() == saved.content_hash()
        for name, t in model.named_parameters():
            np.testing.assert_array_equal(loaded[name].data, t.data)


def micro_cfg(**train_overrides):
    cfg = make_tiny_config()
    sets = [f"train.{k}={v}" for k, v in train_overrides.items()]
    return apply_overrides(cfg, sets)


@pytest.fixture(scope="module")
def trained(shapes_split, tmp_path_factory):
    cfg = micro_cfg(iterations=6, log_every=2, checkpoint_every=4,
                    shots=2, seed=5)
    out = tmp_path_factory.mktemp("train_out")
    rows = []
    model, ckpt = T.train(cfg, shapes_split, out, log_callback=rows.append)
    return cfg, out, model, ckpt, rows


class TestTrainLoop:
    def test_writes_final_and_periodic_checkpoints(self, trained):
        _, out, _, ckpt, _ = trained
        assert ckpt.name == "ckpt_final.rdp"
        assert ckpt.exists()
        assert (out / "ckpt_000004.rdp").exists()

    def test_loss_log_rows(self, trained):
        _, out, _, _, rows = trained
        assert [r["iteration"] for r in rows] == [0, 2, 4, 5]
        assert all(np.isfinite(r["total"]) for r in rows)
        with open(out / "loss_log.csv") as f:
            disk = list(csv.DictReader(f))
        assert [int(r["iteration"]) for r in disk] == [0, 2, 4, 5]

    def test_loss_decreases_from_start(self, trained):
        # iteration 0 is dominated by the uncalibrated objectness term
        _, _, _, _, rows = trained
        assert rows[-1]["total"] < rows[0]["total"]

    def test_checkpoint_meta_iteration(self, trained):
        cfg, _, _, ckpt, _ = trained
        loaded = load_params(ckpt)
        assert loaded.meta["iteration"] == str(cfg.train.iterations)

    def test_training_is_bit_reproducible(self, trained, shapes_split,
                                           tmp_path):
        cfg, _, model, ckpt, _ = trained
        model2, ckpt2 = T.train(cfg, shapes_split, tmp_path / "again")
        h1 = load_params(ckpt).content_hash()
        h2 = load_params(ckpt2).content_hash()
        assert h1 == h2

    def test_non_finite_loss_aborts(self, shapes_split, tmp_path,
                                    monkeypatch):
        class FakeReport:
            def total_value(self):
                return float("nan")

            def as_dict(self):
                return {"total": float("nan")}

        def fake_losses(outputs, targets, cfg=None):
            return FakeReport()

        monkeypatch.setattr(T, "compute_losses", fake_losses)
        cfg = micro_cfg(iterations=1, shots=2)
        with pytest.raises(RuntimeError, match="non-finite loss at iteration 0"):
            T.train(cfg, shapes_split, tmp_path / "bad")


def fixed_supports(split, classes, k):
    return {c: list(split.supports_by_class[c])[:k] for c in classes}


class TestSynthesizeSupportEpisode:
    def make(self, split, cfg, k, seed):
        from reldet.data import ChipCache
        chips = ChipCache(split.dataset, cfg.data.chip_size,
                          cfg.data.chip_input_size)
        novel = sorted(split.novel_classes)
        sets = fixed_supports(split, novel, k)
        return T.synthesize_support_episode(split, sets, chips, seed,
                                            cfg.data.query_max_side), novel

    def test_episode_contract(self, shapes_split, tiny_cfg):
        ep, novel = self.make(shapes_split, tiny_cfg, k=3, seed=4)
        assert ep.c1 in novel and ep.c2 in novel and ep.c1 != ep.c2
        # the query's own support is held out of the shot stack
        assert ep.chips_c1.shape[0] == 2
        assert ep.chips_c2.shape[0] == 3
        assert ep.query_boxes.shape[1] == 4
        assert ep.query_image.shape[1] % 16 == 0
        assert ep.query_image.shape[2] % 16 == 0

    def test_single_shot_reuses_query_support(self, shapes_split, tiny_cfg):
        ep, _ = self.make(shapes_split, tiny_cfg, k=1, seed=4)
        assert ep.chips_c1.shape[0] == 1

    def test_deterministic_in_seed(self, shapes_split, tiny_cfg):
        a, _ = self.make(shapes_split, tiny_cfg, k=3, seed=9)
        b, _ = self.make(shapes_split, tiny_cfg, k=3, seed=9)
        assert a.c1 == b.c1 and a.c2 == b.c2
        np.testing.assert_array_equal(a.query_boxes, b.query_boxes)
        np.testing.assert_array_equal(a.chips_c1, b.chips_c1)

    def test_needs_two_classes(self, shapes_split, tiny_cfg):
        from reldet.data import ChipCache
        chips = ChipCache(shapes_split.dataset, tiny_cfg.data.chip_size,
                          tiny_cfg.data.chip_input_size)
        c = sorted(shapes_split.novel_classes)[0]
        sets = fixed_supports(shapes_split, [c], 2)
        with pytest.raises(ValueError, match="2 classes"):
            T.synthesize_support_episode(shapes_split, sets, chips, 0,
                                         tiny_cfg.data.query_max_side)


class TestFineTune:
    def test_backbone_frozen_head_moves(self, shapes_split, tiny_cfg):
        cfg = micro_cfg()
        model = FewShotDetector(cfg, rng=np.random.default_rng(1))
        before = {n: t.data.copy() for n, t in model.named_parameters()}
        sets = fixed_supports(shapes_split, sorted(shapes_split.novel_classes), 3)
        T.fine_tune(model, cfg, shapes_split, sets, iterations=2, seed=0)
        changed = []
        for n, t in model.named_parameters():
            if n.startswith("backbone."):
                np.testing.assert_array_equal(t.data, before[n], err_msg=n)
            elif not np.array_equal(t.data, before[n]):
                changed.append(n)
        assert changed, "fine-tuning moved no head parameters"

    def test_zero_iterations_is_noop(self, shapes_split, tiny_cfg):
        cfg = micro_cfg()
        model = FewShotDetector(cfg, rng=np.random.default_rng(1))
        before = {n: t.data.copy() for n, t in model.named_parameters()}
        sets = fixed_supports(shapes_split, sorted(shapes_split.novel_classes), 2)
        T.fine_tune(model, cfg, shapes_split, sets, iterations=0, seed=0)
        for n, t in model.named_parameters():
            np.testing.assert_array_equal(t.data, before[n], err_msg=n)
