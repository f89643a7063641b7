"""Duplicate-removal mask over the penultimate layer.

The mask is a pure function of the network shape: the penultimate layer's
expressions are enumerated symbolically over abstract independent slot
variables, canonical-key duplicates are dropped (first occurrence kept),
and the resulting keep-bits are cached on disk for reuse.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .expr import OperatorSet, Variable
from .engine import EnumerationGuardError, enumerated_width, iter_expressions

__all__ = ["DrMask", "mask_fingerprint", "compute_drmask", "apply_mask"]


@dataclass
class DrMask:
    keep: np.ndarray
    fingerprint: str
    kept_indices: np.ndarray = field(init=False)

    def __post_init__(self):
        self.keep = np.asarray(self.keep, dtype=bool)
        self.kept_indices = np.flatnonzero(self.keep).astype(np.int64)

    @property
    def width(self) -> int:
        return len(self.keep)

    @property
    def kept_count(self) -> int:
        return len(self.kept_indices)

    def remap(self) -> dict[int, int]:
        """Original column index -> compacted index, for kept columns."""
        return {int(orig): new for new, orig in enumerate(self.kept_indices)}


def mask_fingerprint(ops: OperatorSet, n_slots: int, n_layers: int) -> str:
    payload = json.dumps({
        "ops": [(o.name, o.kind) for o in ops.ops],
        "n_slots": n_slots,
        "n_layers": n_layers,
    }, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _cache_path(cache_dir: str, fingerprint: str) -> str:
    return os.path.join(cache_dir, f"drmask-{fingerprint[:16]}.bits")


def _load_cached(path: str, fingerprint: str) -> Optional[DrMask]:
    try:
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("fingerprint") != fingerprint:
            return None
        width = payload["width"]
        bits = np.unpackbits(np.frombuffer(bytes.fromhex(payload["keep_hex"]),
                                           dtype=np.uint8))[:width]
        return DrMask(bits.astype(bool), fingerprint)
    except (OSError, ValueError, KeyError):
        return None


def _store_cached(path: str, mask: DrMask, ops: OperatorSet,
                  n_slots: int, n_layers: int) -> None:
    payload = {
        "fingerprint": mask.fingerprint,
        "ops": [o.name for o in ops.ops],
        "n_slots": n_slots,
        "n_layers": n_layers,
        "width": mask.width,
        "kept_count": mask.kept_count,
        "keep_hex": np.packbits(mask.keep.astype(np.uint8)).tobytes().hex(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def compute_drmask(ops: OperatorSet, n_slots: int, n_layers: int,
                   cache_dir: Optional[str] = None,
                   guard: int = 10 ** 7) -> DrMask:
    """Keep-mask over the penultimate layer's columns.

    Depends only on (ops, n_slots, n_layers), never on data.  Cached to
    `drmask-<fingerprint>.bits` under cache_dir when given.
    """
    if n_layers < 2:
        raise ValueError("mask applies to the penultimate layer; need >= 2 layers")
    fingerprint = mask_fingerprint(ops, n_slots, n_layers)
    path = None
    if cache_dir is not None:
        os.makedirs(cache_dir, exist_ok=True)
        path = _cache_path(cache_dir, fingerprint)
        cached = _load_cached(path, fingerprint)
        if cached is not None:
            return cached
    width = enumerated_width(ops, n_slots, n_layers - 1)
    if width > guard:
        raise EnumerationGuardError(
            f"penultimate enumeration of {width} expressions exceeds guard "
            f"{guard}; reduce slots or layers")
    slots = [Variable(f"_s{i}") for i in range(n_slots)]
    keep = np.zeros(width, dtype=bool)
    seen: set[str] = set()
    for i, e in enumerate(iter_expressions(ops, slots, n_layers - 1, guard=guard)):
        key = e.key
        if key not in seen:
            seen.add(key)
            keep[i] = True
    mask = DrMask(keep, fingerprint)
    if path is not None:
        _store_cached(path, mask, ops, n_slots, n_layers)
    return mask


def apply_mask(mask: DrMask, columns: np.ndarray) -> np.ndarray:
    """Compact kept columns, preserving original order."""
    if columns.shape[-1] != mask.width:
        raise ValueError(
            f"mask width {mask.width} does not match {columns.shape[-1]} columns")
    return columns[..., mask.kept_indices]
