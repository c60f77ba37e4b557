"""Parameter registry, checkpoint serialization, and the module tree."""

import json
import struct

import numpy as np
import pytest

from reldet.autodiff import Tensor
from reldet.params import (FORMAT_VERSION, MAGIC, Module, ModuleList, ParamSet,
                           he_init, load_params, save_params, zeros_init)


def small_paramset():
    rng = np.random.default_rng(0)
    ps = ParamSet(meta={"arch": "toy", "seed": 7})
    ps["b.weight"] = Tensor(rng.normal(size=(3, 2)).astype(np.float32))
    ps["a.bias"] = Tensor(rng.normal(size=4))  # float64 stays float64
    ps["c"] = Tensor(np.float32(1.5))
    return ps


class TestParamSet:
    def test_iterates_sorted(self):
        ps = small_paramset()
        assert [k for k, _ in ps.items()] == ["a.bias", "b.weight", "c"]

    def test_content_hash_changes_with_data(self):
        ps = small_paramset()
        h1 = ps.content_hash()
        ps["b.weight"].data[0, 0] += 1.0
        assert ps.content_hash() != h1

    def test_content_hash_ignores_meta(self):
        ps = small_paramset()
        h1 = ps.content_hash()
        ps.meta["seed"] = 99
        assert ps.content_hash() == h1

    def test_copy_is_deep(self):
        ps = small_paramset()
        cp = ps.copy()
        cp["b.weight"].data[0, 0] += 5.0
        assert ps["b.weight"].data[0, 0] != cp["b.weight"].data[0, 0]


class TestSerialization:
    def test_round_trip_bit_identical(self, tmp_path):
        ps = small_paramset()
        path = tmp_path / "p.rdp"
        save_params(ps, path)
        back = load_params(path)
        assert back.meta == ps.meta
        for (k1, t1), (k2, t2) in zip(ps.items(), back.items()):
            assert k1 == k2 and t1.data.dtype == t2.data.dtype
            np.testing.assert_array_equal(t1.data, t2.data)
        assert back.content_hash() == ps.content_hash()

    def test_file_layout(self, tmp_path):
        ps = small_paramset()
        path = tmp_path / "p.rdp"
        save_params(ps, path)
        blob = path.read_bytes()
        assert blob[:6] == MAGIC
        version, = struct.unpack("<I", blob[6:10])
        assert version == FORMAT_VERSION
        header_len, = struct.unpack("<Q", blob[10:18])
        header = json.loads(blob[18:18 + header_len])
        keys = [p["key"] for p in header["params"]]
        assert keys == sorted(keys)
        total = sum(p["nbytes"] for p in header["params"])
        assert len(blob) == 18 + header_len + total

    def test_bad_magic_raises(self, tmp_path):
        path = tmp_path / "junk.rdp"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ValueError):
            load_params(path)

    def test_missing_file_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_params(tmp_path / "absent.rdp")

    def test_save_load_via_methods(self, tmp_path):
        ps = small_paramset()
        path = tmp_path / "m.rdp"
        ps.save(path)
        assert ParamSet.load(path).content_hash() == ps.content_hash()


class Leaf(Module):
    def __init__(self, n):
        super().__init__()
        self.w = Tensor(np.full((n,), float(n), dtype=np.float32))


class Tree(Module):
    def __init__(self):
        super().__init__()
        self.top = Tensor(np.zeros(2, dtype=np.float32))
        self.left = Leaf(3)
        self.stack = ModuleList([Leaf(4), Leaf(5)])


class TestModuleTree:
    def test_named_parameters_paths(self):
        t = Tree()
        names = sorted(n for n, _ in t.named_parameters())
        assert names == ["left.w", "stack.0.w", "stack.1.w", "top"]

    def test_param_set_round_trip_through_module(self, tmp_path):
        src = Tree()
        src.left.w.data[:] = [9.0, 8.0, 7.0]
        path = tmp_path / "tree.rdp"
        save_params(src.param_set(meta={"arch": "tree"}), path)
        dst = Tree()
        dst.load_param_set(load_params(path))
        np.testing.assert_array_equal(dst.left.w.data, [9.0, 8.0, 7.0])

    def test_load_missing_key_raises(self):
        t = Tree()
        full = t.param_set()
        partial = ParamSet({k: v for k, v in full.items() if k != "top"})
        with pytest.raises(KeyError):
            Tree().load_param_set(partial)

    def test_load_shape_mismatch_raises(self):
        t = Tree()
        ps = t.param_set()
        ps["top"] = Tensor(np.zeros(5, dtype=np.float32))
        with pytest.raises(ValueError):
            Tree().load_param_set(ps)


class TestInit:
    def test_he_init_scale(self):
        rng = np.random.default_rng(0)
        t = he_init(rng, (2000,), fan_in=50)
        assert t.dtype == np.float32
        assert abs(t.data.std() - np.sqrt(2.0 / 50)) < 0.01

    def test_he_init_deterministic_in_seed(self):
        a = he_init(np.random.default_rng(3), (4, 4), 16)
        b = he_init(np.random.default_rng(3), (4, 4), 16)
        np.testing.assert_array_equal(a.data, b.data)

    def test_zeros_init(self):
        t = zeros_init((3, 2))
        assert t.dtype == np.float32 and not t.data.any()
