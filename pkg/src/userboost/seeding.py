"""Hierarchical seed derivation: one root seed per run, children per purpose."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *keys: int | str) -> int:
    """Derive a child seed from a root seed and a path of keys.

    Deterministic across platforms and independent of call order, so parallel
    workers (one fold, one sample, ...) can derive their own streams.
    """
    material = repr((int(root),) + tuple(keys)).encode()
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(root: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))
