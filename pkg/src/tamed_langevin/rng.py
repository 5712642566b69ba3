"""Seeding helpers.

All randomness flows through :class:`numpy.random.Generator` backed by the
PCG64 bit generator; normals use numpy's ziggurat transform. Results are
bit-reproducible on one build, not across numpy versions.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the SplitMix64 finalizer applied to ``x + golden``."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def replicate_seed(base_seed: int, replicate: int) -> int:
    """Seed for replicate ``r``: ``base_seed XOR splitmix64(r)``."""
    if base_seed < 0 or base_seed > MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {base_seed}")
    return (base_seed ^ splitmix64(replicate)) & MASK64


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))
