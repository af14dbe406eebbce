"""Seed-stream management.

One root seed deterministically spawns named substreams so that adding a
consumer (say, diagnostics draws) never perturbs the draws seen by another
(the optimizer).  Substreams are derived by hashing the name into a
``SeedSequence`` spawn key, which is NumPy's splittable-counter scheme.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "spawn_repeats"]


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def substream(seed: int | np.random.SeedSequence, name: str) -> np.random.Generator:
    """Return a generator for the named substream of ``seed``.

    The same (seed, name) pair always yields an identical stream, and
    distinct names yield statistically independent streams.
    """
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    child = np.random.SeedSequence(entropy=root.entropy, spawn_key=root.spawn_key + (_name_key(name),))
    return np.random.default_rng(child)


def spawn_repeats(seed: int | np.random.SeedSequence, name: str, n: int) -> list[np.random.Generator]:
    """Independent per-repeat generators under one named substream."""
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    base = np.random.SeedSequence(entropy=root.entropy, spawn_key=root.spawn_key + (_name_key(name),))
    return [np.random.default_rng(s) for s in base.spawn(n)]
