"""Seed derivation.

All randomness in the package flows from explicit integer seeds.  Child
seeds are derived with the SplitMix64 finalizer so that, for example, record
``i`` of a dataset gets the same seed no matter how many records follow it.
"""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """SplitMix64 output function applied to one 64-bit state."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def mix_seed(seed: int, *keys: int) -> int:
    """Fold ``keys`` into ``seed``; ``mix_seed(s, i)`` is the per-record seed."""
    h = splitmix64(int(seed) & _MASK)
    for k in keys:
        h = splitmix64(h ^ (int(k) & _MASK))
    return h


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(mix_seed(seed, *keys)))
