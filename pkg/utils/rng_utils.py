# utils/rng_utils.py
"""Deterministic random substreams.

Every unit of stochastic work (a trial, a sweep point) is keyed by the master seed plus a
tuple of integer indices, so results never depend on scheduling order or thread count.
"""
import numpy as np


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, keys...) via SeedSequence spawn keys."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(sequence)


def rademacher(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
