"""JET heatmaps, heatmap overlays and mask images."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, InputError

JET_ANCHORS = np.array([0.0, 0.125, 0.375, 0.625, 0.875, 1.0])
JET_RGB = np.array([
    [0.0, 0.0, 0.5],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.5, 0.0, 0.0],
])

MODES = ("heatmap", "overlay", "mask")


def jet_colormap(v) -> np.ndarray:
    """Piecewise-linear JET; input is clamped to ``[0, 1]``, output has a trailing RGB axis."""
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.interp(v, JET_ANCHORS, JET_RGB[:, c]) for c in range(3)], axis=-1)


def _saliency(s) -> np.ndarray:
    return np.asarray(getattr(s, "map", s), dtype=np.float64)


def _image(x) -> np.ndarray:
    px = np.asarray(getattr(x, "pixels", x), dtype=np.float64)
    return px[:, :, None] if px.ndim == 2 else px


def render(x, s, mode: str = "overlay", alpha: float = 0.5) -> np.ndarray:
    """Render saliency ``s`` for image ``x`` (pixels in ``[0, 1]``).

    Modes:
        heatmap: ``jet(s)``.
        overlay: ``clip(alpha * jet(s) + (1 - alpha) * x, 0, 1)``; grey images are
            repeated over RGB.
        mask: ``s * x``, keeping the channels of ``x``.
    """
    if mode not in MODES:
        raise ConfigError(f"render mode must be one of {MODES}, got {mode!r}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    sal = _saliency(s)
    if mode == "heatmap":
        return jet_colormap(sal)
    px = _image(x)
    if px.shape[:2] != sal.shape:
        raise InputError(f"saliency shape {sal.shape} does not match image {px.shape[:2]}")
    if mode == "mask":
        return np.clip(sal[:, :, None] * px, 0.0, 1.0)
    if px.shape[2] == 1:
        px = np.repeat(px, 3, axis=2)
    return np.clip(alpha * jet_colormap(sal) + (1.0 - alpha) * px, 0.0, 1.0)


def render_overlay(x, s, alpha: float = 0.5) -> np.ndarray:
    return render(x, s, "overlay", alpha)


def mask_image(x, s) -> np.ndarray:
    return render(x, s, "mask")


def heatmap(s) -> np.ndarray:
    return render(None, s, "heatmap")


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_png(img: np.ndarray, path: str | Path) -> None:
    arr = to_uint8(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")
