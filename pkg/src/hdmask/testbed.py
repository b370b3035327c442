"""Planted-patch images and a linear softmax classifier for desk-scale testing.

Each class owns one (``single`` mode) or two (``dual`` mode) square patches.
An image of class ``c`` is low-amplitude uniform noise with the patches of
``c`` lit up, so the evidence for its label lives exactly in those patches.
The classifier is ``scores = W @ vec(x) + b``; its input gradient is a weight
row, which keeps every gradient check exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, InputError, TrainingError
from .gateway import softmax

Rect = tuple[int, int, int, int]  # top, left, height, width


@dataclass(frozen=True)
class PlantedDataset:
    images: np.ndarray  # (N, H, W, 1)
    labels: np.ndarray  # (N,)
    patches: tuple[tuple[Rect, ...], ...]  # per class
    noise: float
    seed: int

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]  # type: ignore[return-value]

    @property
    def num_classes(self) -> int:
        return len(self.patches)

    def foreground(self, label: int) -> np.ndarray:
        """Boolean ``H x W`` map of the patches belonging to ``label``."""
        fg = np.zeros(self.images.shape[1:3], dtype=bool)
        for top, left, ph, pw in self.patches[label]:
            fg[top:top + ph, left:left + pw] = True
        return fg


def _disjoint(a: Rect, b: Rect) -> bool:
    return (a[0] + a[2] <= b[0] or b[0] + b[2] <= a[0]
            or a[1] + a[3] <= b[1] or b[1] + b[3] <= a[1])


def generate_dataset(seed: int, num_classes: int = 4, mode: str = "single", *,
                     size: int = 32, patch_size: int = 8, per_class: int = 16,
                     noise: float = 0.1, intensity: float = 1.0,
                     second_intensity: float = 0.7,
                     patches: tuple[tuple[Rect, ...], ...] | None = None) -> PlantedDataset:
    """Generate a planted-patch dataset.

    Patch positions are drawn on a coarse cell grid (cell = ``patch_size``) so
    that no two patches, of any class, overlap.  In ``dual`` mode the second
    patch of each class is lit at ``second_intensity`` so the two regions carry
    unequal evidence.  Explicit ``patches`` override the random layout.
    """
    if mode not in ("single", "dual"):
        raise ConfigError(f"patch mode must be 'single' or 'dual', got {mode!r}")
    if num_classes < 2:
        raise ConfigError("need at least two classes")
    rng = np.random.default_rng(seed)
    per = 1 if mode == "single" else 2

    if patches is None:
        cells = size // patch_size
        if cells * cells < num_classes * per:
            raise ConfigError(f"{num_classes * per} patches of size {patch_size} do not fit in {size}x{size}")
        order = rng.permutation(cells * cells)[: num_classes * per]
        rects = [(int(c // cells) * patch_size, int(c % cells) * patch_size, patch_size, patch_size) for c in order]
        patches = tuple(tuple(rects[k * per:(k + 1) * per]) for k in range(num_classes))
    else:
        patches = tuple(tuple(tuple(int(v) for v in r) for r in cls) for cls in patches)
        if len(patches) != num_classes:
            raise ConfigError(f"{len(patches)} patch groups for {num_classes} classes")

    flat = [r for cls in patches for r in cls]
    for top, left, ph, pw in flat:
        if top < 0 or left < 0 or top + ph > size or left + pw > size or ph < 1 or pw < 1:
            raise ConfigError(f"patch {(top, left, ph, pw)} exceeds the {size}x{size} image")
    for a in range(len(flat)):
        for b in range(a + 1, len(flat)):
            if not _disjoint(flat[a], flat[b]):
                raise ConfigError(f"patches {flat[a]} and {flat[b]} overlap")

    labels = np.repeat(np.arange(num_classes), per_class)
    images = rng.uniform(0.0, noise, size=(labels.size, size, size, 1))
    for n, label in enumerate(labels):
        for r, (top, left, ph, pw) in enumerate(patches[label]):
            level = intensity if r == 0 else second_intensity
            images[n, top:top + ph, left:left + pw, 0] = level - rng.uniform(0.0, noise, size=(ph, pw))
    return PlantedDataset(images, labels, patches, noise, seed)


@dataclass
class LinearClassifier:
    """``f(x) = W @ vec(x) + b`` over row-major ``H x W x C`` inputs."""

    weights: np.ndarray  # (num_classes, H*W*C)
    bias: np.ndarray
    input_shape: tuple[int, int, int]
    thread_safe: bool = True

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    def scores(self, x):
        return self.weights @ np.asarray(x, dtype=np.float64).ravel() + self.bias

    def score_and_gradient(self, x, p):
        return float(self.scores(x)[p]), self.weights[p].reshape(self.input_shape).copy()

    def weight_map(self, p: int) -> np.ndarray:
        return self.weights[p].reshape(self.input_shape)

    def save(self, path: str | Path) -> None:
        np.savez(path, weights=self.weights, bias=self.bias, input_shape=np.array(self.input_shape))

    @classmethod
    def load(cls, path: str | Path) -> LinearClassifier:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"model file not found: {path}")
        with np.load(path) as z:
            return cls(z["weights"].astype(np.float64), z["bias"].astype(np.float64),
                       tuple(int(v) for v in z["input_shape"]))


class ConstantClassifier:
    """Scores that ignore the input entirely; every input gradient is zero."""

    thread_safe = True

    def __init__(self, scores, input_shape: tuple[int, int, int]):
        self._scores = np.asarray(scores, dtype=np.float64)
        self.num_classes = self._scores.size
        self.input_shape = tuple(input_shape)

    def scores(self, x):
        return self._scores.copy()

    def score_and_gradient(self, x, p):
        return float(self._scores[p]), np.zeros(self.input_shape)


def fit_linear(dataset: PlantedDataset, *, epochs: int = 2000, learning_rate: float = 0.5,
               l2: float = 1e-3, target_accuracy: float = 0.95) -> LinearClassifier:
    """Full-batch gradient-descent softmax regression with L2 weight decay.

    Raises:
        TrainingError: If training accuracy stays below ``target_accuracy``.
    """
    if dataset.num_classes < 2:
        raise ConfigError("need at least two classes")
    x = dataset.images.reshape(len(dataset.images), -1)
    y = dataset.labels
    n, d = x.shape
    k = dataset.num_classes
    onehot = np.eye(k)[y]
    w = np.zeros((k, d))
    b = np.zeros(k)
    for _ in range(epochs):
        z = x @ w.T + b
        z -= z.max(axis=1, keepdims=True)
        prob = np.exp(z)
        prob /= prob.sum(axis=1, keepdims=True)
        err = (prob - onehot) / n
        w -= learning_rate * (err.T @ x + l2 * w)
        b -= learning_rate * err.sum(axis=0)
    model = LinearClassifier(w, b, dataset.image_shape)
    acc = accuracy(model, dataset)
    if acc < target_accuracy:
        raise TrainingError(f"training accuracy {acc:.3f} below target {target_accuracy}")
    return model


def accuracy(model: LinearClassifier, dataset: PlantedDataset) -> float:
    pred = np.array([np.argmax(model.scores(img)) for img in dataset.images])
    return float(np.mean(pred == dataset.labels))


def class_probability(model, x, p: int) -> float:
    return float(softmax(model.scores(x))[p])


def export_dataset(dataset: PlantedDataset, out_dir: str | Path, *, limit: int | None = None) -> Path:
    """Write 8-bit PNG images, foreground masks and a JSON-lines manifest.

    Returns:
        Path of ``manifest.jsonl`` inside ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    count = len(dataset.images) if limit is None else min(limit, len(dataset.images))
    with manifest.open("w") as fh:
        for n in range(count):
            label = int(dataset.labels[n])
            img_name = f"img_{n:04d}.png"
            fg_name = f"img_{n:04d}.fg.png"
            px = np.clip(np.rint(dataset.images[n, :, :, 0] * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(px, mode="L").save(out_dir / img_name)
            Image.fromarray(dataset.foreground(label).astype(np.uint8) * 255, mode="L").save(out_dir / fg_name)
            fh.write(json.dumps({"image": img_name, "label": label, "foreground": fg_name}) + "\n")
    return manifest
