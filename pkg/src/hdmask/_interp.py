"""Separable bilinear interpolation matrices (half-pixel-centre convention).

A resize of an ``h0 x w0`` grid to ``h x w`` is ``A_h @ grid @ A_w.T`` where
``A_h`` has shape ``(h, h0)``.  Each row holds at most two nonzero weights that
sum to one, so the map preserves constants and never leaves the input range.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=256)
def _matrix(n_out: int, n_in: int) -> np.ndarray:
    a = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        a[i, lo] += 1.0 - frac
        a[i, hi] += frac
    a.setflags(write=False)
    return a


def interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Return the read-only ``(n_out, n_in)`` 1-D bilinear weight matrix."""
    return _matrix(int(n_out), int(n_in))


def resize(grid: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize of the two leading axes; trailing axes are carried along."""
    a_h = interp_matrix(h, grid.shape[0])
    a_w = interp_matrix(w, grid.shape[1])
    out = np.tensordot(a_h, grid, axes=(1, 0))
    out = np.tensordot(a_w, out, axes=(1, 1))
    # tensordot moved the column axis first; restore (h, w, ...) order
    return np.swapaxes(out, 0, 1)


def resize_adjoint(grid: np.ndarray, h0: int, w0: int) -> np.ndarray:
    """Transpose of :func:`resize` mapping an ``(h, w)`` array back to ``(h0, w0)``."""
    a_h = interp_matrix(grid.shape[0], h0)
    a_w = interp_matrix(grid.shape[1], w0)
    return a_h.T @ grid @ a_w
