"""Named parameter sets, module registry, and single-file persistence.

Checkpoint byte layout (documented contract, little-endian throughout):

    bytes 0..5    magic b"RDETPK"
    bytes 6..9    format version, uint32 (currently 1)
    bytes 10..17  header length L, uint64
    bytes 18..18+L  UTF-8 JSON header:
        {"meta": {...arbitrary strings: arch name, config hash, seed...},
         "params": [{"key": str, "dtype": "<f4"|"<f8", "shape": [..],
                     "offset": int, "nbytes": int}, ...]}
    remainder     raw array payloads, concatenated at the stated offsets
                  (offsets relative to the end of the header)

Params are written sorted by key, values little-endian C-order, so the file
is a pure function of (meta, arrays) and round-trips bit-identically.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"RDETPK"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


class ParamSet:
    """Ordered map from string key to Tensor, iterated in sorted-key order."""

    def __init__(self, items: dict[str, Tensor] | None = None,
                 meta: dict[str, str] | None = None):
        self._items: dict[str, Tensor] = {}
        self.meta: dict[str, str] = dict(meta or {})
        for k, v in (items or {}).items():
            self[k] = v

    def __setitem__(self, key: str, value: Tensor):
        if not isinstance(value, Tensor):
            value = Tensor(np.asarray(value))
        self._items[key] = value

    def __getitem__(self, key: str) -> Tensor:
        return self._items[key]

    def __contains__(self, key: str) -> bool:
        return key in self._items

    def __len__(self) -> int:
        return len(self._items)

    def keys(self):
        return sorted(self._items)

    def items(self):
        for k in self.keys():
            yield k, self._items[k]

    def tensors(self):
        for _, t in self.items():
            yield t

    def zero_grad(self):
        for t in self.tensors():
            t.zero_grad()

    def copy(self) -> "ParamSet":
        out = ParamSet(meta=self.meta)
        for k, t in self.items():
            out[k] = Tensor(t.data.copy(), requires_grad=t.requires_grad)
        return out

    def content_hash(self) -> str:
        """SHA-256 over sorted keys, dtypes, shapes, and raw values."""
        h = hashlib.sha256()
        for k, t in self.items():
            arr = _to_le(t.data)
            h.update(k.encode())
            h.update(arr.dtype.str.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def save(self, path):
        save_params(self, path)

    @staticmethod
    def load(path) -> "ParamSet":
        return load_params(path)


def _to_le(arr: np.ndarray) -> np.ndarray:
    tag = "<f8" if arr.dtype.itemsize == 8 else "<f4"
    return np.ascontiguousarray(arr.astype(_DTYPES[tag], copy=False))


def save_params(params: ParamSet, path):
    entries = []
    payloads = []
    offset = 0
    for k, t in params.items():
        arr = _to_le(t.data)
        raw = arr.tobytes()
        entries.append({"key": k, "dtype": arr.dtype.str, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": params.meta, "params": entries},
                        sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in payloads:
            f.write(raw)


def load_params(path) -> ParamSet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:6] != MAGIC:
        raise ValueError(f"not a parameter file (bad magic): {path}")
    version = struct.unpack("<I", blob[6:10])[0]
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported parameter file version {version}: {path}")
    hlen = struct.unpack("<Q", blob[10:18])[0]
    header = json.loads(blob[18:18 + hlen].decode())
    base = 18 + hlen
    out = ParamSet(meta=header.get("meta", {}))
    for e in header["params"]:
        dt = _DTYPES[e["dtype"]]
        start = base + e["offset"]
        arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype=dt)
        arr = arr.reshape(e["shape"]).copy()
        out[e["key"]] = Tensor(arr, requires_grad=True)
    return out


# -- module registry -----------------------------------------------------------


class Module:
    """Composable parameter container; attributes that are Tensors become
    parameters, attributes that are Modules become children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for n, p in self._params.items():
            yield prefix + n, p
        for n, m in self._children.items():
            yield from m.named_parameters(prefix + n + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def param_set(self, meta: dict[str, str] | None = None) -> ParamSet:
        return ParamSet(dict(self.named_parameters()), meta=meta)

    def load_param_set(self, params: ParamSet):
        """Copy values from `params` into this module's tensors in place."""
        own = dict(self.named_parameters())
        missing = [k for k in own if k not in params]
        if missing:
            raise KeyError(f"checkpoint missing parameters: {missing[:5]}")
        for k, t in own.items():
            src = params[k].data
            if src.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {k}: file {src.shape} vs model {t.data.shape}")
            t.data = src.astype(t.data.dtype, copy=True)
            t.grad = None


class ModuleList(Module):
    """Sequence of child modules registered under their index."""

    def __init__(self, mods=()):
        super().__init__()
        self._seq = []
        for m in mods:
            self.append(m)

    def append(self, m: Module):
        self._children[str(len(self._seq))] = m
        self._seq.append(m)

    def __iter__(self):
        return iter(self._seq)

    def __len__(self):
        return len(self._seq)

    def __getitem__(self, i):
        return self._seq[i]


# -- initializers ----------------------------------------------------------------


def he_init(rng: np.random.Generator, shape, fan_in: int,
            dtype=np.float32) -> Tensor:
    """He-normal initialization, gain for ReLU networks."""
    std = np.sqrt(2.0 / max(fan_in, 1))
    return Tensor((rng.standard_normal(shape) * std).astype(dtype),
                  requires_grad=True)


def zeros_init(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
