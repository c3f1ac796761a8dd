"""Separable linear resampling matrices (triangle filter, antialiased when shrinking)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=256)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    scale = n_in / n_out
    support = max(scale, 1.0)
    centers = (np.arange(n_out) + 0.5) * scale - 0.5
    j = np.arange(n_in)
    w = np.maximum(0.0, 1.0 - np.abs(j[None, :] - centers[:, None]) / support)
    w /= w.sum(axis=1, keepdims=True)
    w.setflags(write=False)
    return w


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """``n_out x n_in`` matrix resampling a 1-D signal with pixel-center alignment.

    Rows sum to one, so constants are preserved. Same-size maps are the identity.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be positive")
    return _bilinear_matrix(int(n_in), int(n_out)).astype(dtype, copy=False)


def resize_array(x: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Resize the last two axes of a numpy array."""
    ry = bilinear_matrix(x.shape[-2], size[0], x.dtype)
    rx = bilinear_matrix(x.shape[-1], size[1], x.dtype)
    return ry @ x @ rx.T
