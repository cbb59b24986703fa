"""Deterministic seeds, ids, and content hashing.

Every stochastic stage draws from a numpy Generator seeded by
``derive_seed(global_seed, stage, item)``, so adding or removing items never
perturbs the randomness of the others, and reruns are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np


def canonical_json(obj: Any) -> str:
    """Serialize to a canonical JSON string (sorted keys, stable float repr)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def stable_hash(obj: Any) -> str:
    """Hex sha256 of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def short_id(obj: Any, prefix: str = "") -> str:
    """12-hex-char content id, optionally prefixed (e.g. ``w:3f9a...``)."""
    digest = stable_hash(obj)[:12]
    return f"{prefix}{digest}" if prefix else digest


def derive_seed(global_seed: int, stage: str, item: str = "") -> int:
    """Map (global seed, stage name, item id) to a 63-bit seed."""
    key = f"{global_seed}|{stage}|{item}".encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(global_seed: int, stage: str, item: str = "") -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, stage, item))


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
