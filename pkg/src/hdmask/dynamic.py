"""Dynamic masks: a single multi-scale mask-learning block.

For every benchmark size ``(a, b)`` a coarse grid is trained so that masking
the image with its upsampled version keeps the target score unchanged while
staying small.  Each benchmark then seeds, for every scale factor ``t``, a
cascade of finer grids of shape ``(t**k * a, t**k * b)``; grid ``k`` is
trained multiplied by its frozen, upsampled predecessor.  All trained grids
are upsampled to image size and summed into the stacked mask, and the top
fraction of that sum is kept and renormalized into the overlay mask.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .gateway import PreparedImage, predict
from .maskmath import (
    DirectChain,
    GuidedChain,
    OptimizationResult,
    OptimizerConfig,
    keep_count,
    loss_and_gradient,
    normalize,
    optimize,
    reference_score,
    upsample,
)

log = logging.getLogger(__name__)

STACK_MODES = ("raw", "chained")


@dataclass(frozen=True)
class DMConfig:
    """Hyperparameters of one dynamic-mask block.

    ``eta_overrides`` maps zero-based ``(i, j, k)`` (benchmark, scale factor,
    cascade level) to a level-specific regularization factor; every other
    grid uses ``eta``.  Benchmarks are looked up with ``j = -1``.
    """

    benchmark_sizes: tuple[tuple[int, int], ...] = tuple((s, s) for s in range(6, 12))
    scale_factors: tuple[int, ...] = (2, 3, 5)
    tau: float = 0.5
    eta: float = 100.0
    epochs: int = 800
    learning_rate: float = 1e-2
    gamma_percentile: float = 0.25
    eta_overrides: tuple[tuple[tuple[int, int, int], float], ...] = ()
    clamp: bool = True
    stack_mode: str = "raw"

    def __post_init__(self):
        sizes = tuple((int(a), int(b)) for a, b in self.benchmark_sizes)
        object.__setattr__(self, "benchmark_sizes", sizes)
        object.__setattr__(self, "scale_factors", tuple(int(t) for t in self.scale_factors))
        object.__setattr__(self, "eta_overrides",
                           tuple(((int(i), int(j), int(k)), float(v)) for (i, j, k), v in dict(self.eta_overrides).items()))
        if not sizes:
            raise ConfigError("at least one benchmark size is required")
        if any(a < 1 or b < 1 for a, b in sizes):
            raise ConfigError(f"benchmark sizes must be positive, got {sizes}")
        if len(set(sizes)) != len(sizes):
            raise ConfigError(f"benchmark sizes must be pairwise distinct, got {sizes}")
        if not self.scale_factors or any(t < 2 for t in self.scale_factors):
            raise ConfigError(f"scale factors must be integers >= 2, got {self.scale_factors}")
        if not 0.0 < self.gamma_percentile < 1.0:
            raise ConfigError(f"gamma percentile must lie in (0, 1), got {self.gamma_percentile}")
        if self.eta < 0 or any(v < 0 for _, v in self.eta_overrides):
            raise ConfigError("regularization factors must be >= 0")
        if self.stack_mode not in STACK_MODES:
            raise ConfigError(f"stack mode must be one of {STACK_MODES}, got {self.stack_mode!r}")
        self.optimizer  # validates epochs / learning rate

    @property
    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(self.epochs, self.learning_rate, self.clamp)

    def eta_for(self, i: int, j: int, k: int) -> float:
        return dict(self.eta_overrides).get((i, j, k), self.eta)


@dataclass
class CascadeEntry:
    i: int
    j: int
    k: int
    grid: np.ndarray
    trace: list[float] = field(default_factory=list)


@dataclass
class DMResult:
    overlay_mask: np.ndarray
    stacked_mask: np.ndarray
    benchmarks: list[np.ndarray]
    benchmark_traces: list[list[float]]
    cascade: list[CascadeEntry]
    target: int
    gamma: float

    def traces(self) -> dict[str, list[float]]:
        """Loss trace of every trained grid, keyed ``d{i}`` or ``c{i}.{j}.{k}``."""
        out = {f"d{i}": t for i, t in enumerate(self.benchmark_traces)}
        for e in self.cascade:
            if e.k > 0:
                out[f"c{e.i}.{e.j}.{e.k}"] = e.trace
        return out


def cascade_depth(h: int, w: int, a: int, b: int, t: int) -> int:
    """Deepest level ``K`` with ``t**K * a <= h`` and ``t**K * b <= w``.

    Equal to ``min(floor(ln(h/a) / ln t), floor(ln(w/b) / ln t))``, evaluated
    in integers to avoid rounding at exact powers.
    """
    if a < 1 or b < 1 or a > h or b > w:
        raise ConfigError(f"benchmark size {(a, b)} does not fit in image {(h, w)}")
    if t < 2:
        raise ConfigError(f"scale factor must be >= 2, got {t}")
    k = 0
    while t ** (k + 1) * a <= h and t ** (k + 1) * b <= w:
        k += 1
    return k


def _pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, PreparedImage) else np.asarray(x, dtype=np.float64)


def train_benchmark(model, x, size: tuple[int, int], cfg: DMConfig, p: int, *,
                    i: int = 0, reference: float | None = None) -> OptimizationResult:
    x = _pixels(x)
    ref = reference_score(model, x, p) if reference is None else reference
    eta = cfg.eta_for(i, -1, 0)
    start = np.full(size, cfg.tau)
    return optimize(start, lambda v: loss_and_gradient(model, x, v, DirectChain(), eta, p, ref), cfg.optimizer)


def train_cascade(model, x, benchmark: np.ndarray, t: int, cfg: DMConfig, p: int, *,
                  i: int = 0, j: int = 0, reference: float | None = None,
                  benchmark_trace: list[float] | None = None) -> list[CascadeEntry]:
    """Grow the guided cascade for one benchmark grid and scale factor.

    Level 0 is the benchmark itself.  Level ``k`` starts at ``tau`` and is
    trained against its frozen predecessor.
    """
    x = _pixels(x)
    h, w = x.shape[:2]
    a, b = benchmark.shape
    depth = cascade_depth(h, w, a, b, t)
    ref = reference_score(model, x, p) if reference is None else reference
    entries = [CascadeEntry(i, j, 0, np.array(benchmark, dtype=np.float64), list(benchmark_trace or []))]
    for k in range(1, depth + 1):
        shape = (t ** k * a, t ** k * b)
        frozen = entries[-1].grid.copy()
        chain = GuidedChain(frozen)
        eta = cfg.eta_for(i, j, k)
        res = optimize(np.full(shape, cfg.tau),
                       lambda v, chain=chain, eta=eta: loss_and_gradient(model, x, v, chain, eta, p, ref),
                       cfg.optimizer)
        entries.append(CascadeEntry(i, j, k, res.values, res.trace))
    return entries


def stack_masks(entries, h: int, w: int, mode: str = "raw") -> np.ndarray:
    """Sum of every trained grid upsampled to ``h x w``.

    In ``chained`` mode each level contributes the running product
    ``c_k * up(c_{k-1} * up(...))`` instead of its raw grid.
    """
    entries = list(entries)
    if not entries:
        raise ConfigError("cannot stack an empty cascade")
    if mode not in STACK_MODES:
        raise ConfigError(f"stack mode must be one of {STACK_MODES}, got {mode!r}")
    total = np.zeros((h, w))
    running: dict[tuple[int, int], np.ndarray] = {}
    for e in entries:
        grid = e.grid
        if mode == "chained":
            prev = running.get((e.i, e.j)) if e.k > 0 else None
            grid = grid if prev is None else grid * upsample(prev, *grid.shape)
            running[(e.i, e.j)] = grid
        total += upsample(grid, h, w)
    return total


def overlay_threshold(stacked, q: float) -> float:
    """Largest value outside the top ``q`` fraction, or the minimum when nothing is left out.

    Pixels strictly above the returned value are exactly the top
    ``ceil(q * n)`` pixels (up to ties).
    """
    flat = np.sort(np.asarray(stacked, dtype=np.float64).ravel())[::-1]
    n_keep = keep_count(flat.size, q)
    return float(flat[n_keep]) if n_keep < flat.size else float(flat[-1])


def threshold_overlay(stacked, q: float) -> np.ndarray:
    stacked = np.asarray(stacked, dtype=np.float64)
    gamma = overlay_threshold(stacked, q)
    return normalize((stacked - gamma) * (stacked >= gamma))


def run_dm(model, x, cfg: DMConfig, target: int | None = None) -> DMResult:
    """Train every benchmark and cascade on ``x`` and build the overlay mask."""
    px = _pixels(x)
    h, w = px.shape[:2]
    p = predict(model, px).predicted_class if target is None else int(target)
    ref = reference_score(model, px, p)
    for a, b in cfg.benchmark_sizes:
        cascade_depth(h, w, a, b, 2)  # early size check

    benchmarks, bench_traces, cascade = [], [], []
    for i, size in enumerate(cfg.benchmark_sizes):
        res = train_benchmark(model, px, size, cfg, p, i=i, reference=ref)
        log.debug("benchmark %s: loss %.4g -> %.4g", size, res.initial_loss, res.final_loss)
        benchmarks.append(res.values)
        bench_traces.append(res.trace)
        for j, t in enumerate(cfg.scale_factors):
            cascade.extend(train_cascade(model, px, res.values, t, cfg, p, i=i, j=j,
                                         reference=ref, benchmark_trace=res.trace))

    stacked = stack_masks(cascade, h, w, cfg.stack_mode)
    gamma = overlay_threshold(stacked, cfg.gamma_percentile)
    overlay = normalize((stacked - gamma) * (stacked >= gamma))
    return DMResult(overlay, stacked, benchmarks, bench_traces, cascade, p, gamma)
