"""Shared fixtures: a tiny model configuration and a small shapes dataset."""

from __future__ import annotations

import numpy as np
import pytest

from reldet.config import parse_config
from reldet.data import load_coco, split_classes
from reldet.synthetic import BASE_CLASS_IDS, NOVEL_CLASS_IDS, generate


def make_tiny_config(**model_overrides):
    doc = {
        "backbone": {"widths": [4, 8, 12, 16]},
        "model": {"proto_size": 3, **model_overrides},
        "anchors": {"scales": [16, 32], "ratios": [0.5, 1.0, 2.0]},
        "proposal": {"pre_nms_top": 200, "post_nms_top": 20},
        "head": {"regress_hidden": 8, "patch_width": 4},
        "data": {"chip_size": 32, "chip_input_size": 32,
                 "query_max_side": 64, "min_support_area": 16.0},
        "train": {"head_samples": 4, "rpn_samples": 16},
    }
    return parse_config(doc)


@pytest.fixture
def tiny_cfg():
    return make_tiny_config()


@pytest.fixture(scope="session")
def shapes_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("shapes")
    generate(out, images_per_class=6, image_size=96, seed=3)
    return out


@pytest.fixture(scope="session")
def shapes_split(shapes_dir):
    ds = load_coco(shapes_dir / "annotations.json", shapes_dir)
    return split_classes(ds, BASE_CLASS_IDS, NOVEL_CLASS_IDS,
                         min_support_area=100.0)
