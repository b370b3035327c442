"""Mask arithmetic: upsampling and its adjoint, normalization, losses, descent.

Masks are plain 2-D float64 arrays in ``[0, 1]``.  A single ``H x W`` mask
multiplies every channel of an ``H x W x C`` image.

The objective for a mask ``m`` on image ``x`` and class ``p`` is::

    J   = (f_p(m * x) - f_p(x)) ** 2
    L_R = mean(|m|)
    L   = J + factor * L_R

Three parameterizations of ``m`` are supported (see :class:`DirectChain`,
:class:`GuidedChain`, :class:`MixChain`), and :func:`loss_and_gradient`
back-propagates ``L`` to the trainable array of each.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from . import _interp
from .errors import ConfigError, DegenerateWeightsError, InputError, NumericError
from .gateway import PreparedImage, target_score_and_gradient


@dataclass(frozen=True)
class LossBreakdown:
    consistency: float
    regularizer: float
    factor: float
    total: float

    @classmethod
    def from_parts(cls, consistency: float, regularizer: float, factor: float) -> LossBreakdown:
        consistency, regularizer, factor = float(consistency), float(regularizer), float(factor)
        return cls(consistency, regularizer, factor, consistency + factor * regularizer)


@dataclass(frozen=True)
class OptimizerConfig:
    epochs: int
    learning_rate: float
    clamp: bool = True

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise ConfigError(f"epochs must be a positive integer, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")


@dataclass
class OptimizationResult:
    values: np.ndarray
    trace: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.trace[0]

    @property
    def final_loss(self) -> float:
        return self.trace[-1]


def _as_grid(m, name: str = "mask") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise InputError(f"{name} must be a non-empty 2-D grid, got shape {m.shape}")
    return m


def _image(x) -> np.ndarray:
    return x.pixels if isinstance(x, PreparedImage) else np.asarray(x, dtype=np.float64)


def upsample(m, h: int, w: int) -> np.ndarray:
    """Bilinear upsampling of grid ``m`` to ``h x w`` (half-pixel centres)."""
    m = _as_grid(m)
    if h < m.shape[0] or w < m.shape[1]:
        raise InputError(f"cannot upsample {m.shape} to smaller target {(h, w)}")
    if (h, w) == m.shape:
        return m.copy()
    return _interp.resize(m, h, w)


def upsample_adjoint(grad_out, src_shape: tuple[int, int]) -> np.ndarray:
    """Transpose of ``upsample(., h, w)`` for a source of shape ``src_shape``."""
    grad_out = _as_grid(grad_out, "gradient")
    h0, w0 = (int(v) for v in src_shape)
    if h0 < 1 or w0 < 1 or h0 > grad_out.shape[0] or w0 > grad_out.shape[1]:
        raise InputError(f"source shape {src_shape} inconsistent with upsampled shape {grad_out.shape}")
    if (h0, w0) == grad_out.shape:
        return grad_out.copy()
    return _interp.resize_adjoint(grad_out, h0, w0)


def normalize(m) -> np.ndarray:
    """Min-max scale to ``[0, 1]``; a constant grid maps to all zeros."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise InputError("cannot normalize non-finite values")
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def apply_mask(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    return m[:, :, None] * x


def _consistency_and_grad(model, x: np.ndarray, m: np.ndarray, p: int, reference: float):
    if m.shape != x.shape[:2]:
        raise InputError(f"mask shape {m.shape} does not match image {x.shape[:2]}")
    score, g = target_score_and_gradient(model, apply_mask(m, x), p)
    diff = score - reference
    return diff * diff, 2.0 * diff * np.sum(g * x, axis=2)


def reference_score(model, x, p: int) -> float:
    """``f_p(x)`` for the unmasked image."""
    return float(model.scores(_image(x))[p])


def consistency_loss(model, x, m, p: int, reference: float | None = None) -> float:
    x = _image(x)
    m = _as_grid(m)
    if m.shape != x.shape[:2]:
        raise InputError(f"mask shape {m.shape} does not match image {x.shape[:2]}")
    ref = reference_score(model, x, p) if reference is None else reference
    diff = float(model.scores(apply_mask(m, x))[p]) - ref
    return diff * diff


def mask_regularizer(m) -> float:
    return float(np.mean(np.abs(np.asarray(m, dtype=np.float64))))


def _regularizer_grad(m: np.ndarray) -> np.ndarray:
    # subgradient 0 at 0 comes for free from np.sign
    return np.sign(m) / m.size


# -- chain descriptors ---------------------------------------------------------


@dataclass(frozen=True)
class DirectChain:
    """``m = up(trainable, H, W)``: a benchmark grid on its own."""


@dataclass(frozen=True)
class GuidedChain:
    """``m = up(trainable * up(predecessor, *trainable.shape), H, W)``.

    The predecessor is frozen.  The regularizer is applied to
    ``up(trainable, H, W)`` alone.
    """

    predecessor: np.ndarray


@dataclass(frozen=True)
class MixChain:
    """``m = sum_j w_j M_j / sum_j w_j`` with ``w_j = sum_{k>=j} v_k**2``; trainable is ``v``."""

    masks: tuple[np.ndarray, ...]


Chain = Union[DirectChain, GuidedChain, MixChain]


def mix_weights(v) -> np.ndarray:
    """Suffix sums of squares, so weights never increase with the stage index."""
    v = np.asarray(v, dtype=np.float64).ravel()
    return np.cumsum((v * v)[::-1])[::-1]


def mix_masks(masks, v) -> np.ndarray:
    masks = [np.asarray(m, dtype=np.float64) for m in masks]
    w = mix_weights(v)
    if len(masks) != len(w):
        raise InputError(f"{len(masks)} masks but {len(w)} weight parameters")
    if any(m.shape != masks[0].shape for m in masks):
        raise InputError("all masks must share one shape")
    total = w.sum()
    if total == 0:
        raise DegenerateWeightsError("all mixing weights are zero")
    alpha = w / total
    # offsets from the first mask keep identical inputs reproducing exactly
    out = masks[0].copy()
    for a, m in zip(alpha[1:], masks[1:]):
        out += a * (m - masks[0])
    stack = np.stack(masks)
    return np.clip(out, stack.min(axis=0), stack.max(axis=0))


def _mix_grad(masks, v: np.ndarray, dm: np.ndarray) -> np.ndarray:
    w = mix_weights(v)
    alpha = w / w.sum()
    # dM_h/dw_j = (M_j - M_h)/sum(w), with M_h - M_j = sum_k alpha_k (M_k - M_j)
    dw = np.empty(len(masks))
    for j, mj in enumerate(masks):
        gap = np.zeros_like(mj)
        for a, mk in zip(alpha, masks):
            gap += a * (mk - mj)
        dw[j] = -np.sum(dm * gap) / w.sum()
    # w_j depends on v_k for every k >= j
    return 2.0 * v * np.cumsum(dw)


def loss_and_gradient(model, x, trainable, chain: Chain, factor: float, p: int,
                      reference: float | None = None) -> tuple[LossBreakdown, np.ndarray]:
    """Objective value and its gradient with respect to ``trainable``.

    Args:
        model: Classifier handle with input gradients.
        x: Image the mask is applied to (``PreparedImage`` or ``H x W x C`` array).
        trainable: The array being optimized; a grid for the direct and guided
            forms, a length-``S`` weight vector for the mix form.
        chain: How ``trainable`` becomes a full-resolution mask.
        factor: Regularization weight.
        p: Target class.
        reference: Cached ``f_p(x)``; computed when omitted.

    Returns:
        The loss breakdown and a gradient shaped like ``trainable``.
    """
    x = _image(x)
    h, w = x.shape[:2]
    ref = reference_score(model, x, p) if reference is None else reference
    t = np.asarray(trainable, dtype=np.float64)

    if isinstance(chain, DirectChain):
        t = _as_grid(t, "trainable")
        m = upsample(t, h, w)
        j, dj = _consistency_and_grad(model, x, m, p, ref)
        reg = mask_regularizer(m)
        grad = upsample_adjoint(dj + factor * _regularizer_grad(m), t.shape)
    elif isinstance(chain, GuidedChain):
        t = _as_grid(t, "trainable")
        guide = upsample(chain.predecessor, *t.shape)
        m = upsample(t * guide, h, w)
        j, dj = _consistency_and_grad(model, x, m, p, ref)
        r = upsample(t, h, w)
        reg = mask_regularizer(r)
        grad = guide * upsample_adjoint(dj, t.shape) + factor * upsample_adjoint(_regularizer_grad(r), t.shape)
    elif isinstance(chain, MixChain):
        masks = [np.asarray(m, dtype=np.float64) for m in chain.masks]
        t = t.ravel()
        m = mix_masks(masks, t)
        j, dj = _consistency_and_grad(model, x, m, p, ref)
        reg = mask_regularizer(m)
        grad = _mix_grad(masks, t, dj + factor * _regularizer_grad(m))
    else:
        raise ConfigError(f"unsupported chain descriptor {type(chain).__name__}")

    return LossBreakdown.from_parts(j, reg, factor), grad


Objective = Callable[[np.ndarray], "tuple[LossBreakdown, np.ndarray]"]


def optimize(trainable, objective: Objective, cfg: OptimizerConfig) -> OptimizationResult:
    """Plain gradient descent, projected onto ``[0, 1]`` when ``cfg.clamp`` is set.

    The trace holds the loss at the start of every epoch plus the loss of the
    returned values, so it has ``cfg.epochs + 1`` entries.
    """
    v = np.array(trainable, dtype=np.float64)
    if cfg.clamp:
        np.clip(v, 0.0, 1.0, out=v)
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        loss, grad = objective(v)
        if not np.isfinite(loss.total) or not np.all(np.isfinite(grad)):
            raise NumericError("non-finite loss or gradient", epoch)
        trace.append(loss.total)
        v -= cfg.learning_rate * grad
        if cfg.clamp:
            np.clip(v, 0.0, 1.0, out=v)
    loss, _ = objective(v)
    if not np.isfinite(loss.total):
        raise NumericError("non-finite loss", cfg.epochs)
    trace.append(loss.total)
    return OptimizationResult(v, trace)


def keep_count(n: int, fraction: float) -> int:
    """Number of entries in the top ``fraction`` of ``n`` (nearest rank, at least one)."""
    return min(n, max(1, int(np.ceil(fraction * n - 1e-9))))


def top_fraction_threshold(values, fraction: float) -> float:
    """Smallest value among the top ``ceil(fraction * n)`` entries.

    Keeping everything ``>=`` this threshold keeps exactly that many entries
    when there are no ties at the boundary.
    """
    flat = np.sort(np.asarray(values, dtype=np.float64).ravel())[::-1]
    return float(flat[keep_count(flat.size, fraction) - 1])
