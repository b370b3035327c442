"""Uniform access to differentiable classifiers.

Any model can be explained as long as it is wrapped in an object exposing

* ``num_classes`` and ``input_shape`` (``(H, W, C)``),
* ``scores(x)``: pre-softmax class scores for one ``H x W x C`` float array,
* ``score_and_gradient(x, p)``: ``(scores(x)[p], d scores[p] / d x)``.

Arrays are row-major ``H x W x C`` float64.  :class:`FunctionClassifier` builds
such an object from two plain callables, which is the intended adapter route
for torch / tensorflow / jax models.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, runtime_checkable

import numpy as np
from PIL import Image

from . import _interp
from .errors import CapabilityError, ConfigError, InputError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class RawImage:
    """Pixels in ``[0, 1]`` with shape ``(H, W, C)``, ``C`` in ``{1, 3}``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.dtype == np.uint8:
            px = px.astype(np.float64) / 255.0
        else:
            px = px.astype(np.float64)
        if px.ndim != 3 or px.shape[2] not in (1, 3) or min(px.shape) < 1:
            raise InputError(f"expected an H x W x C image with C in {{1, 3}}, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise InputError("image contains non-finite pixel values")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class PreparedImage:
    """Resized, channel-normalized pixels ready for the classifier."""

    pixels: np.ndarray
    original_size: tuple[int, int]
    mean: tuple[float, ...]
    std: tuple[float, ...]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape  # type: ignore[return-value]

    def with_pixels(self, pixels: np.ndarray) -> PreparedImage:
        return PreparedImage(np.asarray(pixels, dtype=np.float64), self.original_size, self.mean, self.std)


@dataclass(frozen=True)
class Prediction:
    scores: np.ndarray
    predicted_class: int


@runtime_checkable
class ClassifierHandle(Protocol):
    num_classes: int
    input_shape: tuple[int, int, int]

    def scores(self, x: np.ndarray) -> np.ndarray: ...

    def score_and_gradient(self, x: np.ndarray, p: int) -> tuple[float, np.ndarray]: ...


@dataclass
class FunctionClassifier:
    """Adapter over two plain functions.

    Args:
        scores_fn: ``x -> scores`` for one ``H x W x C`` array.
        gradient_fn: ``(x, p) -> (score_p, grad)``; ``None`` for score-only models,
            which can still be evaluated but not explained.
        num_classes: Length of the score vector.
        input_shape: Expected ``(H, W, C)``.
        thread_safe: Whether concurrent calls are allowed.  Unsafe handles are
            serialized with an internal lock.
    """

    scores_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Callable[[np.ndarray, int], tuple[float, np.ndarray]] | None
    num_classes: int
    input_shape: tuple[int, int, int]
    thread_safe: bool = False
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def scores(self, x):
        if self.thread_safe:
            return np.asarray(self.scores_fn(x), dtype=np.float64)
        with self._lock:
            return np.asarray(self.scores_fn(x), dtype=np.float64)

    def score_and_gradient(self, x, p):
        if self.gradient_fn is None:
            raise CapabilityError("this classifier was wrapped without an input-gradient function")
        if self.thread_safe:
            s, g = self.gradient_fn(x, p)
        else:
            with self._lock:
                s, g = self.gradient_fn(x, p)
        return float(s), np.asarray(g, dtype=np.float64)


class SoftmaxView:
    """Expose post-softmax probabilities of a logit classifier as its scores.

    The probability gradient needs every logit gradient:
    ``d sigma_p = sigma_p * (d z_p - sum_k sigma_k d z_k)``.
    """

    def __init__(self, model: ClassifierHandle):
        self.model = model
        self.num_classes = model.num_classes
        self.input_shape = tuple(model.input_shape)
        self.thread_safe = getattr(model, "thread_safe", False)

    def scores(self, x):
        return softmax(self.model.scores(x))

    def score_and_gradient(self, x, p):
        probs = self.scores(x)
        mixed = np.zeros(np.shape(x))
        own = None
        for k in range(self.num_classes):
            _, g = target_score_and_gradient(self.model, x, k)
            mixed += probs[k] * g
            if k == p:
                own = g
        return float(probs[p]), probs[p] * (own - mixed)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z))
    return e / e.sum()


def with_score_mode(model: ClassifierHandle, mode: str) -> ClassifierHandle:
    """Return ``model`` itself for ``"logit"`` or a :class:`SoftmaxView` for ``"probability"``."""
    if mode == "logit":
        return model
    if mode == "probability":
        return model if isinstance(model, SoftmaxView) else SoftmaxView(model)
    raise ConfigError(f"unknown score mode {mode!r}; expected 'logit' or 'probability'")


def load_image(path: str | Path) -> RawImage:
    """Read an 8-bit PNG / JPEG / BMP file into a :class:`RawImage`."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"image not found: {path}")
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I;16", "I"):
            arr = np.asarray(im.convert("L"))
        else:
            arr = np.asarray(im.convert("RGB"))
    return RawImage(arr)


def preprocess(img: RawImage, target_size: tuple[int, int], mean, std) -> PreparedImage:
    """Bilinear resize to ``target_size`` followed by per-channel normalization."""
    h, w = (int(v) for v in target_size)
    if h <= 0 or w <= 0:
        raise ConfigError(f"target size must be positive, got {target_size}")
    c = img.pixels.shape[2]
    try:
        mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (c,))
        std = np.broadcast_to(np.asarray(std, dtype=np.float64), (c,))
    except ValueError as exc:
        raise ConfigError(f"mean/std do not match an image with {c} channel(s)") from exc
    if np.any(std <= 0):
        raise ConfigError("normalization std components must be > 0")
    if not np.all(np.isfinite(img.pixels)):
        raise InputError("image contains non-finite pixel values")
    resized = _interp.resize(img.pixels, h, w)
    out = (resized - mean) / std
    return PreparedImage(out, img.pixels.shape[:2], tuple(mean.tolist()), tuple(std.tolist()))


def _pixels(model: ClassifierHandle, x) -> np.ndarray:
    px = x.pixels if isinstance(x, PreparedImage) else np.asarray(x, dtype=np.float64)
    if tuple(px.shape) != tuple(model.input_shape):
        raise InputError(f"input shape {px.shape} does not match model input {tuple(model.input_shape)}")
    return px


def predict(model: ClassifierHandle, x) -> Prediction:
    scores = np.asarray(model.scores(_pixels(model, x)), dtype=np.float64)
    # np.argmax returns the first maximal index, i.e. ties go to the lowest class
    return Prediction(scores, int(np.argmax(scores)))


def target_score_and_gradient(model: ClassifierHandle, x, p: int) -> tuple[float, np.ndarray]:
    """Score of class ``p`` and its gradient with respect to the input pixels."""
    px = _pixels(model, x)
    if not 0 <= p < model.num_classes:
        raise InputError(f"class index {p} outside [0, {model.num_classes})")
    fn = getattr(model, "score_and_gradient", None)
    if fn is None:
        raise CapabilityError(f"{type(model).__name__} does not provide input gradients")
    try:
        score, grad = fn(px, p)
    except NotImplementedError as exc:
        raise CapabilityError(f"{type(model).__name__} does not provide input gradients") from exc
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != px.shape:
        raise CapabilityError(f"gradient shape {grad.shape} differs from input shape {px.shape}")
    return float(score), grad


class _Serialized:
    """Lock-guarded view of a handle that does not allow concurrent calls."""

    thread_safe = True

    def __init__(self, model: ClassifierHandle):
        self.model = model
        self.num_classes = model.num_classes
        self.input_shape = tuple(model.input_shape)
        self._lock = threading.Lock()

    def scores(self, x):
        with self._lock:
            return self.model.scores(x)

    def score_and_gradient(self, x, p):
        with self._lock:
            return self.model.score_and_gradient(x, p)


def serialized(model: ClassifierHandle) -> ClassifierHandle:
    """Return ``model`` if it declares ``thread_safe``, else a lock-guarded view."""
    return model if getattr(model, "thread_safe", False) else _Serialized(model)
