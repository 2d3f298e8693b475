"""Seeded random streams.

Every random draw in the toolkit goes through a ``numpy.random.Generator``
backed by the counter-based Philox bit generator. Nothing touches the global
numpy RNG.
"""
from __future__ import annotations

import hashlib

import numpy as np


def make_rng(seed) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed`` (int or SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(*parts) -> int:
    """Hash an arbitrary tuple of labels into a 63-bit seed.

    Used so that each benchmark cell owns a stream that does not depend on
    which other cells exist.
    """
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def spawn(seed, n: int) -> list[np.random.Generator]:
    """Split ``seed`` into ``n`` independent generators."""
    ss = np.random.SeedSequence(seed)
    return [make_rng(child) for child in ss.spawn(n)]
