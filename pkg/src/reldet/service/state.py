"""In-memory session state for the operator service.

One session = one mission: a frame store, a class registry with support
chips, and a per-class prototype cache. Mutations serialize through a lock;
prototypes are invalidated whenever their class's support list changes, and
rebuilt atomically inside the lock so detection never sees a half-updated
class.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..aggregation import ClassPrototype
from ..autodiff import Tensor, no_grad
from ..config import Config
from ..data import crop_support
from ..model import FewShotDetector
from ..ops import bilinear_resize

FRAME_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class FrameStore:
    """Directory of images addressed by file stem, sorted for paging."""
    root: Path
    _index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.root = Path(self.root)
        if not self.root.is_dir():
            raise FileNotFoundError(f"frames directory not found: {self.root}")
        for p in sorted(self.root.iterdir()):
            if p.suffix.lower() in FRAME_SUFFIXES:
                self._index[p.stem] = p

    def ids(self):
        return sorted(self._index)

    def __contains__(self, frame_id: str) -> bool:
        return frame_id in self._index

    def path(self, frame_id: str) -> Path:
        return self._index[frame_id]

    def size(self, frame_id: str):
        with Image.open(self._index[frame_id]) as im:
            return im.width, im.height

    def load(self, frame_id: str) -> np.ndarray:
        """(3,H,W) float32 in [0,1]."""
        arr = np.asarray(Image.open(self._index[frame_id]).convert("RGB"),
                         dtype=np.float32) / 255.0
        return np.ascontiguousarray(arr.transpose(2, 0, 1))


@dataclass
class RegisteredClass:
    class_id: int
    name: str
    chips: dict = field(default_factory=dict)  # chip_id -> (3,S,S) pixels
    next_chip_id: int = 1


class SessionState:
    """Thread-safe registry of classes, supports, and cached prototypes."""

    def __init__(self, model: FewShotDetector, cfg: Config, frames: FrameStore,
                 checkpoint_id: str, param_hash: str):
        self.model = model
        self.cfg = cfg
        self.frames = frames
        self.checkpoint_id = checkpoint_id
        self.initial_param_hash = param_hash
        self._classes: dict[int, RegisteredClass] = {}
        self._prototypes: dict[int, ClassPrototype] = {}
        self._next_class_id = 1
        self._lock = threading.Lock()

    # -- class registry ----------------------------------------------------

    def add_class(self, name: str) -> RegisteredClass:
        with self._lock:
            cid = self._next_class_id
            self._next_class_id += 1
            rc = RegisteredClass(class_id=cid, name=name)
            self._classes[cid] = rc
            return rc

    def classes(self) -> list[RegisteredClass]:
        with self._lock:
            return [self._classes[c] for c in sorted(self._classes)]

    def get_class(self, class_id: int) -> RegisteredClass | None:
        with self._lock:
            return self._classes.get(class_id)

    # -- supports ----------------------------------------------------------

    def add_support(self, class_id: int, frame_id: str, box) -> tuple[int, int]:
        """Crop the support, store it, invalidate and rebuild the prototype.

        Returns (chip_id, shot count). Raises KeyError/ValueError upward.
        """
        image = self.frames.load(frame_id)
        chip = crop_support(image, box, class_id=class_id,
                            chip_size=self.cfg.data.chip_size)
        with self._lock:
            rc = self._classes[class_id]
            chip_id = rc.next_chip_id
            rc.next_chip_id += 1
            rc.chips[chip_id] = chip.pixels
            self._rebuild_prototype(rc)
            return chip_id, len(rc.chips)

    def remove_support(self, class_id: int, chip_id: int) -> int:
        with self._lock:
            rc = self._classes[class_id]
            del rc.chips[chip_id]
            self._rebuild_prototype(rc)
            return len(rc.chips)

    def _chip_stack(self, rc: RegisteredClass) -> np.ndarray:
        chips = [rc.chips[cid] for cid in sorted(rc.chips)]
        size = self.cfg.data.chip_input_size
        if size != self.cfg.data.chip_size:
            with no_grad():
                chips = [bilinear_resize(Tensor(c), (size, size)).data
                         for c in chips]
        return np.stack(chips, axis=0)

    def _rebuild_prototype(self, rc: RegisteredClass):
        """Caller holds the lock."""
        if not rc.chips:
            self._prototypes.pop(rc.class_id, None)
            return
        with no_grad():
            self._prototypes[rc.class_id] = self.model.build_prototype(
                self._chip_stack(rc), class_id=rc.class_id)

    def prototype_hash(self, class_id: int) -> str | None:
        with self._lock:
            proto = self._prototypes.get(class_id)
            if proto is None:
                return None
            h = hashlib.sha256()
            h.update(proto.e.data.tobytes())
            for g in proto.scs_kernels:
                h.update(g.data.tobytes())
            return h.hexdigest()

    # -- detection ----------------------------------------------------------

    def prototypes_for(self, class_ids=None) -> tuple[list, list]:
        """Snapshot of prototypes (list) and ids lacking supports (list)."""
        with self._lock:
            wanted = sorted(self._classes) if class_ids is None \
                else [int(c) for c in class_ids]
            missing_cls = [c for c in wanted if c not in self._classes]
            if missing_cls:
                raise KeyError(f"unknown class ids: {missing_cls}")
            lacking = [c for c in wanted if c not in self._prototypes]
            protos = [self._prototypes[c] for c in wanted
                      if c in self._prototypes]
            return protos, lacking

    def class_name(self, class_id: int) -> str:
        with self._lock:
            return self._classes[class_id].name

    def param_hash(self) -> str:
        return self.model.params().content_hash()

    # -- snapshot ------------------------------------------------------------

    def snapshot(self, path):
        """JSON snapshot of the class registry (names and shot counts)."""
        doc = {"checkpoint_id": self.checkpoint_id,
               "classes": [{"class_id": rc.class_id, "name": rc.name,
                            "shots": len(rc.chips)}
                           for rc in self.classes()]}
        Path(path).write_text(json.dumps(doc, indent=2))
