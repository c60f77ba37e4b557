"""Episodic SGD training and support-only fine-tuning.

One iteration = one 2-way contrastive episode. Backbone parameters take a
separate learning rate; configured stage prefixes (or the whole backbone
during fine-tuning) are frozen by exclusion from the update. Any non-finite
loss aborts with the iteration and episode seed.
"""

from __future__ import annotations

import csv
import time
from pathlib import Path

import numpy as np

from .config import Config, config_hash, dump_config
from .data import (ChipCache, DatasetSplit, Episode, prepare_query,
                   sample_episode)
from .losses import compute_losses
from .model import FewShotDetector
from .params import ParamSet


class SGD:
    """SGD with momentum over named parameters, per-name learning rates."""

    def __init__(self, named_params, lr_fn, momentum: float = 0.9,
                 frozen_prefixes=(), grad_clip: float = 0.0):
        self.items = [(n, p) for n, p in named_params
                      if not any(n.startswith(f) for f in frozen_prefixes)]
        self.lr_fn = lr_fn
        self.momentum = momentum
        self.grad_clip = grad_clip
        self.velocity = {n: np.zeros_like(p.data) for n, p in self.items}

    def zero_grad(self):
        for _, p in self.items:
            p.grad = None

    def _clip(self):
        if self.grad_clip <= 0:
            return
        total = 0.0
        for _, p in self.items:
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
        norm = np.sqrt(total)
        if norm > self.grad_clip:
            scale = self.grad_clip / (norm + 1e-12)
            for _, p in self.items:
                if p.grad is not None:
                    p.grad = p.grad * scale

    def step(self):
        self._clip()
        for n, p in self.items:
            if p.grad is None:
                continue
            v = self.velocity[n]
            v *= self.momentum
            v += p.grad
            p.data = p.data - self.lr_fn(n) * v.astype(p.data.dtype)


def _freeze_prefixes(cfg: Config) -> list:
    return [f"backbone.{s}." for s in cfg.backbone.frozen_stages]


def make_optimizer(model: FewShotDetector, cfg: Config,
                   extra_frozen=()) -> SGD:
    def lr_fn(name: str) -> float:
        return (cfg.train.lr_backbone if name.startswith("backbone.")
                else cfg.train.lr_head)
    frozen = _freeze_prefixes(cfg) + list(extra_frozen)
    return SGD(model.named_parameters(), lr_fn, cfg.train.momentum,
               frozen_prefixes=frozen, grad_clip=cfg.train.grad_clip)


def _checkpoint_meta(cfg: Config, iteration: int) -> dict:
    return {"arch": "reldet", "config_hash": config_hash(cfg),
            "config": dump_config(cfg), "seed": str(cfg.train.seed),
            "iteration": str(iteration)}


def save_checkpoint(model: FewShotDetector, cfg: Config, iteration: int,
                    path) -> ParamSet:
    ps = model.params(meta=_checkpoint_meta(cfg, iteration))
    ps.save(path)
    return ps


def episode_seed(base_seed: int, iteration: int) -> int:
    return int(base_seed) * 1_000_003 + int(iteration)


def train(cfg: Config, split: DatasetSplit, out_dir,
          model: FewShotDetector | None = None,
          log_callback=None) -> tuple[FewShotDetector, Path]:
    """Train for cfg.train.iterations episodes; returns (model, ckpt path).

    Writes checkpoint files and a loss-curve CSV (iteration, loss terms)
    under out_dir.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = FewShotDetector(cfg, rng=np.random.default_rng(cfg.train.seed))
    chips = ChipCache(split.dataset, cfg.data.chip_size,
                      cfg.data.chip_input_size)
    opt = make_optimizer(model, cfg)
    log_rows = []
    t_start = time.time()

    for it in range(cfg.train.iterations):
        seed = episode_seed(cfg.train.seed, it)
        episode = sample_episode(split, seed, chips, shots=cfg.train.shots,
                                 query_max_side=cfg.data.query_max_side)
        rng = np.random.default_rng([cfg.train.seed, it, 17])
        opt.zero_grad()
        outputs, targets = model.forward_train(episode, rng)
        report = compute_losses(outputs, targets, cfg.train)
        if not np.isfinite(report.total_value()):
            raise RuntimeError(
                f"non-finite loss at iteration {it} (episode seed {seed}): "
                f"{report.as_dict()}")
        report.total.backward()
        opt.step()

        if it % cfg.train.log_every == 0 or it == cfg.train.iterations - 1:
            row = {"iteration": it, **report.as_dict(),
                   "elapsed_s": round(time.time() - t_start, 2)}
            log_rows.append(row)
            if log_callback:
                log_callback(row)
        if cfg.train.checkpoint_every > 0 and it > 0 \
                and it % cfg.train.checkpoint_every == 0:
            save_checkpoint(model, cfg, it, out / f"ckpt_{it:06d}.rdp")

    final = out / "ckpt_final.rdp"
    save_checkpoint(model, cfg, cfg.train.iterations, final)
    _write_loss_log(out / "loss_log.csv", log_rows)
    return model, final


def _write_loss_log(path: Path, rows):
    if not rows:
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def synthesize_support_episode(split: DatasetSplit, support_sets: dict,
                               chips: ChipCache, seed: int,
                               query_max_side: int) -> Episode:
    """Build one 2-way episode from fixed k-shot support annotations.

    support_sets: class_id -> [Annotation]. The query is the source image of
    one support of the positive class; that support is left out of the shot
    stack when more than one shot exists.
    """
    rng = np.random.default_rng(seed)
    cids = sorted(c for c, anns in support_sets.items() if len(anns) >= 1)
    if len(cids) < 2:
        raise ValueError("need at least 2 classes with supports to fine-tune")
    i = int(rng.integers(len(cids)))
    c1 = cids[i]
    c2 = cids[(i + int(rng.integers(1, len(cids)))) % len(cids)]
    anns1 = support_sets[c1]
    q_idx = int(rng.integers(len(anns1)))
    q_ann = anns1[q_idx]
    shots1 = [a for j, a in enumerate(anns1) if j != q_idx] or [q_ann]
    shots2 = list(support_sets[c2])

    raw = split.dataset.load_image(q_ann.image_id)
    prepared, scale = prepare_query(raw, query_max_side)
    gt = np.stack([a.box for a in split.dataset.images[q_ann.image_id].annotations
                   if a.category_id == c1]) * scale
    return Episode(query_image=prepared, query_boxes=gt, c1=c1, c2=c2,
                   chips_c1=chips.stack(shots1), chips_c2=chips.stack(shots2),
                   seed=seed)


def fine_tune(model: FewShotDetector, cfg: Config, split: DatasetSplit,
              support_sets: dict, iterations: int,
              seed: int = 0) -> FewShotDetector:
    """Continue training on episodes synthesized from fixed novel supports.

    The backbone is frozen (bit-identical afterwards); only relation, fusion,
    aggregation, and head parameters update. iterations == 0 is a no-op.
    """
    chips = ChipCache(split.dataset, cfg.data.chip_size,
                      cfg.data.chip_input_size)
    opt = make_optimizer(model, cfg, extra_frozen=("backbone.",))
    for it in range(iterations):
        ep_seed = episode_seed(seed, it) + 977
        episode = synthesize_support_episode(split, support_sets, chips,
                                             ep_seed, cfg.data.query_max_side)
        rng = np.random.default_rng([seed, it, 31])
        opt.zero_grad()
        outputs, targets = model.forward_train(episode, rng)
        report = compute_losses(outputs, targets, cfg.train)
        if not np.isfinite(report.total_value()):
            raise RuntimeError(
                f"non-finite loss at fine-tune iteration {it} "
                f"(episode seed {ep_seed})")
        report.total.backward()
        opt.step()
    return model
