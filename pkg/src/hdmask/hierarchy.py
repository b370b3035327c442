"""Hierarchical dynamic masks: stacked DM stages plus a learned stage mix.

Stage ``i`` runs a dynamic-mask block on the image left after suppressing
everything the earlier stages found::

    M_i = DM(X_{i-1})
    X_i = (1 - normalize(M_1 + ... + M_i)) * X_0

The stage masks are then blended with weights ``w_j = sum_{k>=j} v_k**2``
(earlier stages never weigh less than later ones) where ``v`` is fitted by
gradient descent on the same consistency-plus-size loss, evaluated on ``X_0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamic import DMConfig, DMResult, run_dm
from .errors import ConfigError
from .gateway import (
    IMAGENET_MEAN,
    IMAGENET_STD,
    PreparedImage,
    RawImage,
    predict,
    preprocess,
    with_score_mode,
)
from .maskmath import (
    MixChain,
    OptimizerConfig,
    apply_mask,
    loss_and_gradient,
    mix_masks,
    mix_weights,
    normalize,
    optimize,
    reference_score,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HDMConfig:
    stages: int = 3
    dm: DMConfig = field(default_factory=DMConfig)
    mix_epochs: int = 400
    mix_learning_rate: float = 1e-1
    lam: float = 1e-4
    v_init: float = 1.0
    image_size: tuple[int, int] = (224, 224)
    mean: tuple[float, ...] = IMAGENET_MEAN
    std: tuple[float, ...] = IMAGENET_STD
    score_mode: str = "logit"

    def __post_init__(self):
        if int(self.stages) != self.stages or self.stages < 1:
            raise ConfigError(f"stages must be a positive integer, got {self.stages}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.v_init == 0:
            raise ConfigError("v_init must be nonzero, otherwise every mixing weight is zero")
        if self.score_mode not in ("logit", "probability"):
            raise ConfigError(f"score mode must be 'logit' or 'probability', got {self.score_mode!r}")
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))
        object.__setattr__(self, "mean", tuple(float(v) for v in self.mean))
        object.__setattr__(self, "std", tuple(float(v) for v in self.std))
        if any(s <= 0 for s in self.std):
            raise ConfigError("normalization std components must be > 0")
        self.mix_optimizer  # validates epochs / learning rate

    @property
    def mix_optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self.mix_epochs, self.mix_learning_rate, clamp=False)


@dataclass
class HDMResult:
    stage_masks: list[np.ndarray]
    stage_images: list[np.ndarray]
    stage_results: list[DMResult]
    weight_params: np.ndarray
    weights: np.ndarray
    mixed_mask: np.ndarray
    mix_trace: list[float]
    target: int
    prepared: PreparedImage | None = None

    def traces(self) -> dict[str, dict[str, list[float]] | list[float]]:
        out: dict = {f"stage{n + 1}": r.traces() for n, r in enumerate(self.stage_results)}
        out["mix"] = self.mix_trace
        return out


def _pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, PreparedImage) else np.asarray(x, dtype=np.float64)


def suppress(x0: np.ndarray, masks) -> np.ndarray:
    """``(1 - normalize(sum(masks))) * x0`` with the mask broadcast over channels."""
    keep = 1.0 - normalize(np.sum(masks, axis=0))
    return apply_mask(keep, x0)


def iterate_stages(model, x0, cfg: HDMConfig, target: int | None = None):
    """Run ``cfg.stages`` DM blocks with cumulative suppression.

    Returns:
        ``(masks, images, dm_results)`` where ``images[i]`` is the input to the
        stage after mask ``i``.
    """
    x0 = _pixels(x0)
    p = predict(model, x0).predicted_class if target is None else int(target)
    masks, images, results = [], [], []
    current = x0
    for stage in range(cfg.stages):
        res = run_dm(model, current, cfg.dm, target=p)
        masks.append(res.overlay_mask)
        results.append(res)
        current = suppress(x0, masks)
        images.append(current)
        log.info("stage %d done: overlay mass %.3f", stage + 1, float(res.overlay_mask.sum()))
    return masks, images, results


def mix_mask(masks, v) -> np.ndarray:
    return mix_masks(masks, v)


def optimize_mix(model, x0, masks, cfg: HDMConfig, target: int | None = None):
    """Fit the stage-weight parameters ``v``.

    Returns:
        ``(v, mixed_mask, loss_trace)``.
    """
    x0 = _pixels(x0)
    p = predict(model, x0).predicted_class if target is None else int(target)
    ref = reference_score(model, x0, p)
    chain = MixChain(tuple(np.asarray(m, dtype=np.float64) for m in masks))
    start = np.full(len(masks), float(cfg.v_init))
    res = optimize(start, lambda v: loss_and_gradient(model, x0, v, chain, cfg.lam, p, ref), cfg.mix_optimizer)
    return res.values, mix_masks(chain.masks, res.values), res.trace


def explain_prepared(model, x: PreparedImage, cfg: HDMConfig) -> HDMResult:
    model = with_score_mode(model, cfg.score_mode)
    p = predict(model, x).predicted_class
    masks, images, results = iterate_stages(model, x, cfg, target=p)
    v, mixed, trace = optimize_mix(model, x, masks, cfg, target=p)
    return HDMResult(masks, images, results, v, mix_weights(v), mixed, trace, p, x)


def explain(model, raw: RawImage, cfg: HDMConfig) -> HDMResult:
    """Preprocess ``raw`` and produce the full hierarchical explanation."""
    x = preprocess(raw, cfg.image_size, cfg.mean, cfg.std)
    return explain_prepared(model, x, cfg)
