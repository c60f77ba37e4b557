"""Typed configuration with strict YAML parsing and canonical round-trip.

Every key has a default; unknown keys are rejected with their dotted path.
`dump` produces a canonical document (sorted keys) so that parse(dump(cfg))
== cfg and the dump's hash identifies the configuration.
"""

from __future__ import annotations

import copy
import hashlib
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

ENV_CONFIG_VAR = "AIRDET_CONFIG"


class ConfigError(ValueError):
    """Bad key, bad type, or unreadable config document."""


@dataclass
class ModelConfig:
    use_scs: bool = True
    use_glr: bool = True
    use_pre: bool = True
    proto_size: int = 7


@dataclass
class BackboneConfig:
    widths: list = field(default_factory=lambda: [16, 32, 64, 128])
    norm_mean: float = 0.5
    norm_std: float = 0.5
    frozen_stages: list = field(default_factory=list)  # e.g. ["stages.0"]


@dataclass
class AnchorConfig:
    scales: list = field(default_factory=lambda: [32, 64, 96])
    ratios: list = field(default_factory=lambda: [0.5, 1.0, 2.0])


@dataclass
class ProposalConfig:
    pre_nms_top: int = 1000
    nms_thresh: float = 0.7
    post_nms_top: int = 100
    min_size: float = 1.0


@dataclass
class HeadConfig:
    regress_hidden: int = 128
    patch_width: int = 32
    rank_by: str = "classifier"  # or "objectness"
    cross_class_nms: bool = False
    cross_class_nms_thresh: float = 0.5


@dataclass
class DataConfig:
    chip_size: int = 320
    chip_input_size: int = 320
    query_max_side: int = 256
    min_support_area: float = 1024.0  # 32^2 pixels


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr_backbone: float = 0.004
    lr_head: float = 0.008
    momentum: float = 0.9
    seed: int = 0
    shots: int = 10
    checkpoint_every: int = 500
    log_every: int = 50
    rpn_pos_iou: float = 0.7
    rpn_neg_iou: float = 0.3
    rpn_samples: int = 256
    head_pos_iou: float = 0.5
    head_samples: int = 16
    grad_clip: float = 10.0


@dataclass
class EvalConfig:
    shots: list = field(default_factory=lambda: [1, 3, 5])
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    max_queries: int = 0  # 0 = no cap
    score_thresh: float = 0.0
    max_dets: int = 100


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8321
    frames_dir: str = ""
    snapshot_path: str = ""
    page_size: int = 50


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    proposal: ProposalConfig = field(default_factory=ProposalConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    service: ServiceConfig = field(default_factory=ServiceConfig)


_SCALARS = (bool, int, float, str)


def _coerce(value, target_type, path: str):
    if target_type is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{path}: expected bool, got {value!r}")
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected int, got {value!r}")
        return value
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        return float(value)
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if target_type is list:
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected list, got {value!r}")
        return list(value)
    raise ConfigError(f"{path}: unsupported config field type {target_type}")


def _apply(obj, doc: dict, path: str = ""):
    valid = {f.name: f for f in fields(obj)}
    for key, value in doc.items():
        here = f"{path}{key}"
        if key not in valid:
            raise ConfigError(f"unknown config key: {here}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a mapping")
            _apply(current, value, here + ".")
        else:
            setattr(obj, key, _coerce(value, type(current), here))


def parse_config(doc: dict | None) -> Config:
    """Build a Config from a parsed YAML mapping; unknown keys rejected."""
    cfg = Config()
    if doc is None:
        return cfg
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    _apply(cfg, doc)
    return cfg


def load_config(path) -> Config:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    return parse_config(doc)


def default_config() -> Config:
    return Config()


def config_from_env_or_default() -> Config:
    env = os.environ.get(ENV_CONFIG_VAR)
    if env:
        return load_config(env)
    return default_config()


def dump_config(cfg: Config) -> str:
    """Canonical YAML: sorted keys, plain style."""
    return yaml.safe_dump(asdict(cfg), sort_keys=True, default_flow_style=False)


def config_hash(cfg: Config) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()


def apply_overrides(cfg: Config, overrides) -> Config:
    """Dotted --set overrides like train.iterations=500; returns a new Config."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, _, raw = item.partition("=")
        key = key.strip()
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"override {key}: unparseable value {raw!r}") from e
        node: dict = {}
        leaf = node
        parts = key.split(".")
        for p in parts[:-1]:
            leaf[p] = {}
            leaf = leaf[p]
        leaf[parts[-1]] = value
        _apply(cfg, node)
    return cfg
