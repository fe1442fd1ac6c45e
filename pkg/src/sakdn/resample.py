"""Bilinear resampling expressed as a pair of interpolation matrices."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    if n_out == 1:
        # single output sample sits at the centre of the input grid
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] += 1.0 - frac
    m[rows, lo + 1] += frac
    m.setflags(write=False)
    return m


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) row-stochastic matrix with corner-aligned sample points."""
    if n_in < 1 or n_out < 1:
        raise ValueError("sizes must be positive")
    return _bilinear_matrix(int(n_in), int(n_out))


def resize2d(a: np.ndarray, h: int, w: int) -> np.ndarray:
    """Resize the last two axes of ``a`` to (h, w)."""
    if a.shape[-2:] == (h, w):
        return a.copy()
    ry = bilinear_matrix(a.shape[-2], h)
    rx = bilinear_matrix(a.shape[-1], w)
    return ry @ a @ rx.T
