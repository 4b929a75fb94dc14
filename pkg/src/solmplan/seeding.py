"""Stable fan-out of one global seed to every stochastic component."""

from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFFFFFFFFFF


def mix_seed(seed: int, *keys) -> int:
    """Deterministic 64-bit child seed for ``keys`` (ints or strings) under ``seed``."""
    ss = np.random.SeedSequence([_key(seed), *(_key(k) for k in keys)])
    lo, hi = (int(v) for v in ss.generate_state(2, dtype=np.uint32))
    return lo | (hi << 32)


def rng_for(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(mix_seed(seed, *keys))
