"""Periodic encoding of offsets: each offset ``x`` becomes ``(cos 2πx/120, sin 2πx/120)``."""

import numpy as np

from .netmodel import CYCLE_S


def encode_many(settings) -> np.ndarray:
    """Encode an ``(n, C)`` array of offsets into ``(n, 2C)`` features, pairs in input order."""
    x = np.asarray(settings)
    angle = (2.0 * np.pi / CYCLE_S) * (np.mod(x, CYCLE_S).astype(np.float64))
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],), dtype=np.float64)
    out[..., 0::2] = np.cos(angle)
    out[..., 1::2] = np.sin(angle)
    return out


def encode(setting) -> np.ndarray:
    return encode_many(np.asarray(setting)[None, :])[0]
