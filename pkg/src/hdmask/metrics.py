"""Faithfulness and localization metrics for saliency maps.

* average drop / average increase after muting all but the most salient pixels
* deletion / insertion curves (1% steps) and their trapezoidal AUC
* energy proportion of the map inside a foreground region

The corpus helpers at the bottom read a JSON-lines manifest of images and
write a JSON-lines report with one record per image and a final aggregate.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _interp
from .errors import ConfigError, InputError
from .gateway import PreparedImage, load_image, predict, preprocess, serialized, softmax
from .maskmath import top_fraction_threshold
from .saliency_io import SaliencyRecord, load_saliency

ALL_METRICS = ("drop", "increase", "deletion", "insertion", "proportion")
# fraction of pixels muted for the drop / increase settings
MUTE_SETTINGS = (0.8, 0.7)


@dataclass(frozen=True)
class CurvePoints:
    fractions: np.ndarray
    probabilities: np.ndarray


def _map(s) -> np.ndarray:
    return np.asarray(getattr(s, "map", s), dtype=np.float64)


def _pixels(x) -> np.ndarray:
    return x.pixels if isinstance(x, PreparedImage) else np.asarray(x, dtype=np.float64)


def class_score(model, x, p: int, score: str = "probability") -> float:
    z = model.scores(_pixels(x))
    if score == "probability":
        return float(softmax(z)[p])
    if score == "logit":
        return float(z[p])
    raise ConfigError(f"score must be 'probability' or 'logit', got {score!r}")


def mute_below_percentile(x, s, keep_fraction: float, mute_value: float = 0.0) -> np.ndarray:
    """Keep pixels whose saliency reaches the top ``keep_fraction``; set the rest to ``mute_value``."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ConfigError(f"keep fraction must lie in (0, 1], got {keep_fraction}")
    px = _pixels(x)
    sal = _map(s)
    if sal.shape != px.shape[:2]:
        raise InputError(f"saliency shape {sal.shape} does not match image {px.shape[:2]}")
    keep = sal >= top_fraction_threshold(sal, keep_fraction)
    return np.where(keep[:, :, None], px, mute_value)


def _pairs(y, o) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    o = np.asarray(o, dtype=np.float64).ravel()
    if y.size == 0:
        raise InputError("need at least one (Y, O) pair")
    if y.shape != o.shape:
        raise InputError(f"{y.size} original scores but {o.size} explanation scores")
    return y, o


def average_drop(y, o) -> float:
    """Mean relative score loss in percent: ``mean(max(0, Y - O) / Y) * 100``."""
    y, o = _pairs(y, o)
    if np.any(y <= 0):
        raise InputError("original scores must be > 0 for average drop")
    return float(np.mean(np.maximum(0.0, y - o) / y) * 100.0)


def average_increase(y, o) -> float:
    """Fraction of images whose score strictly increases."""
    y, o = _pairs(y, o)
    return float(np.mean(y < o))


def trapezoid_auc(fractions, values) -> float:
    return float(np.trapezoid(values, fractions))


def deletion_insertion(model, x, s, mode: str, p: int | None = None, *,
                       steps: int = 100, score: str = "probability") -> tuple[CurvePoints, float]:
    """Score curve while pixels are removed (deletion) or restored (insertion) by saliency rank.

    Deletion starts from ``x`` and zeroes pixels; insertion starts from an
    all-ones image and copies pixels back from ``x``.  Ties in saliency keep
    row-major order.
    """
    if mode not in ("deletion", "insertion"):
        raise ConfigError(f"mode must be 'deletion' or 'insertion', got {mode!r}")
    px = _pixels(x)
    sal = _map(s)
    if sal.shape != px.shape[:2]:
        raise InputError(f"saliency shape {sal.shape} does not match image {px.shape[:2]}")
    if p is None:
        p = predict(model, px).predicted_class
    h, w, c = px.shape
    n = h * w
    order = np.argsort(-sal.ravel(), kind="stable")
    flat_x = px.reshape(n, c)
    cur = (flat_x.copy() if mode == "deletion" else np.ones_like(flat_x))
    fractions = np.linspace(0.0, 1.0, steps + 1)
    values = np.empty(steps + 1)
    done = 0
    for step in range(steps + 1):
        upto = step * n // steps
        idx = order[done:upto]
        cur[idx] = 0.0 if mode == "deletion" else flat_x[idx]
        done = upto
        values[step] = class_score(model, cur.reshape(h, w, c), p, score)
    return CurvePoints(fractions, values), trapezoid_auc(fractions, values)


def energy_proportion(s, foreground) -> float:
    sal = _map(s)
    fg = np.asarray(foreground)
    if fg.shape != sal.shape:
        raise InputError(f"foreground shape {fg.shape} does not match saliency {sal.shape}")
    if np.any(sal < 0):
        raise InputError("energy proportion needs a nonnegative saliency map")
    total = sal.sum()
    if total == 0:
        return 0.0
    return float(sal[fg.astype(bool)].sum() / total)


# -- corpus evaluation ---------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    image: Path
    label: int | None = None
    foreground: Path | None = None
    saliency: Path | None = None


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    base = path.parent
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rec = json.loads(line)
            image = base / rec["image"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise InputError(f"{path}:{lineno}: malformed manifest line") from exc
        entries.append(ManifestEntry(
            image,
            None if rec.get("label") is None else int(rec["label"]),
            None if rec.get("foreground") is None else base / rec["foreground"],
            None if rec.get("saliency") is None else base / rec["saliency"],
        ))
    return entries


def saliency_path(entry: ManifestEntry, saliency_dir: str | Path) -> Path:
    return entry.saliency if entry.saliency is not None else Path(saliency_dir) / f"{entry.image.stem}.sal"


def load_foreground(path: Path, size: tuple[int, int]) -> np.ndarray:
    fg = load_image(path).pixels.mean(axis=2)
    if fg.shape != tuple(size):
        fg = _interp.resize(fg, *size)
    return fg >= 0.5


def evaluate_image(model, x: PreparedImage, record: SaliencyRecord, *, foreground=None,
                   metrics=ALL_METRICS, score: str = "probability", target: int | None = None) -> dict:
    """All selected metrics for one image; keys are documented in the README."""
    unknown = set(metrics) - set(ALL_METRICS)
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}; choose from {ALL_METRICS}")
    if record.shape != x.shape[:2]:
        raise InputError(f"saliency shape {record.shape} does not match prepared image {x.shape[:2]}")
    if target is None:
        target = record.target if record.target >= 0 else predict(model, x).predicted_class
    out: dict = {"class": int(target)}
    if "drop" in metrics or "increase" in metrics:
        y = class_score(model, x, target, score)
        out["Y"] = y
        for muted in MUTE_SETTINGS:
            tag = f"{round(muted * 100)}"
            o = class_score(model, mute_below_percentile(x, record, 1.0 - muted), target, score)
            out[f"O_{tag}"] = o
            if "drop" in metrics:
                out[f"drop_{tag}"] = average_drop([y], [o])
            if "increase" in metrics:
                out[f"increase_{tag}"] = average_increase([y], [o])
    for mode in ("deletion", "insertion"):
        if mode in metrics:
            _, auc = deletion_insertion(model, x, record, mode, target, score=score)
            out[mode] = auc
    if "proportion" in metrics and foreground is not None:
        out["proportion"] = energy_proportion(record, foreground)
    return out


def aggregate(records: list[dict]) -> dict:
    """Mean of every numeric metric over the records that carry it."""
    keys = sorted({k for r in records for k in r if k.startswith(("drop_", "increase_"))
                   or k in ("deletion", "insertion", "proportion")})
    out: dict = {"type": "aggregate", "count": len(records)}
    for k in keys:
        vals = [r[k] for r in records if k in r]
        out[k] = float(np.mean(vals))
    # recomputed from the raw pairs so the aggregate is the textbook formula
    for tag in {k.split("_", 1)[1] for k in keys if "_" in k}:
        pairs = [(r["Y"], r[f"O_{tag}"]) for r in records if f"O_{tag}" in r]
        if pairs and f"drop_{tag}" in out:
            out[f"drop_{tag}"] = average_drop(*zip(*pairs))
        if pairs and f"increase_{tag}" in out:
            out[f"increase_{tag}"] = average_increase(*zip(*pairs))
    return out


def evaluate_manifest(model, manifest: str | Path, saliency_dir: str | Path, *,
                      image_size: tuple[int, int], mean, std, metrics=ALL_METRICS,
                      score: str = "probability", jobs: int = 1) -> list[dict]:
    """Evaluate every manifest entry; returns per-image records then the aggregate.

    Raises:
        InputError: If any listed image has no saliency file (all offenders are named).
    """
    entries = read_manifest(manifest)
    missing = [str(saliency_path(e, saliency_dir)) for e in entries if not saliency_path(e, saliency_dir).is_file()]
    if missing:
        raise InputError("missing saliency files: " + ", ".join(missing))

    def one(entry: ManifestEntry) -> dict:
        x = preprocess(load_image(entry.image), image_size, mean, std)
        record = load_saliency(saliency_path(entry, saliency_dir))
        fg = load_foreground(entry.foreground, x.shape[:2]) if entry.foreground is not None else None
        res = evaluate_image(model, x, record, foreground=fg, metrics=metrics, score=score)
        head = {"type": "image", "image": str(entry.image)}
        if entry.label is not None:
            head["label"] = entry.label
        return {**head, **res}

    if jobs > 1:
        model = serialized(model)
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, entries))
    else:
        records = [one(e) for e in entries]
    return records + [aggregate(records)]


def write_report(records: list[dict], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
