"""Deterministic seed and stream derivation.

Every simulation instance owns independent random streams, one per purpose
(quality redraws, consumer preferences, review noise, ...).  Instance seeds
are derived from the master seed with splitmix64, and each (instance seed,
purpose) pair maps to its own PCG64 generator.  Streams are consumed at a
fixed, documented number of values per round, so results never depend on
which learners are attached, on worker count, or on instance batching.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4B7C15

# Purpose tags for per-instance substreams.
QUALITY = 0
THETA = 1
EPSILON = 2
MASK = 3
OWA = 4
VALIDATION = 5
EVAL = 6


def splitmix64(seed: int, index: int) -> int:
    """Return element `index` of the splitmix64 stream seeded at `seed`."""
    z = (seed + (index + 1) * _GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def instance_seed(master_seed: int, instance_index: int) -> int:
    """Per-instance seed: splitmix64 of (master seed, instance index)."""
    return splitmix64(master_seed & _MASK64, instance_index)


def stream(seed: int, purpose: int, *extra: int) -> np.random.Generator:
    """A dedicated generator for (seed, purpose[, extra derivation keys])."""
    ss = np.random.SeedSequence((seed & _MASK64, purpose, *extra))
    return np.random.Generator(np.random.PCG64(ss))
