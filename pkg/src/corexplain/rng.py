"""Deterministic named random substreams.

All randomness in the package flows from a single integer seed through
named substreams, so that results are identical regardless of execution
order or worker scheduling.  A substream is addressed by a path of
strings and integers, e.g. ``substream(7, "explain", "kt", 12, i)``.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(part: str | int) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def seed_sequence(seed: int, *path: str | int) -> np.random.SeedSequence:
    """Seed sequence for the substream addressed by ``path``."""
    return np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(_key(p) for p in path)])


def substream(seed: int, *path: str | int) -> np.random.Generator:
    """Generator for the substream addressed by ``path``.

    Pure function of its arguments: the same (seed, path) always yields a
    generator producing the same stream.
    """
    return np.random.default_rng(seed_sequence(seed, *path))
