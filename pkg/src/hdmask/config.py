"""Named hyperparameter presets and the plain-text config file format.

Config files are INI-style with an ``[hdm]`` and a ``[dm]`` section::

    [hdm]
    stages = 3
    mix_epochs = 400
    mix_learning_rate = 0.1
    lambda = 0.0001
    v_init = 1.0
    image_size = 224x224
    mean = 0.485, 0.456, 0.406
    std = 0.229, 0.224, 0.225
    score_mode = logit

    [dm]
    benchmark_sizes = 6x6, 7x7, 8x8
    scale_factors = 2, 3, 5
    tau = 0.5
    eta = 100
    epochs = 800
    learning_rate = 0.01
    gamma_percentile = 0.25
    clamp = true
    stack_mode = raw
    eta_overrides = 0:0:1=50, 1:0:2=20

Keys left out fall back to the base preset.  ``eta_overrides`` entries are
zero-based ``benchmark:scale:level=value``.
"""

from __future__ import annotations

import configparser
import dataclasses
from pathlib import Path

from .dynamic import DMConfig
from .errors import ConfigError
from .gateway import IMAGENET_MEAN, IMAGENET_STD
from .hierarchy import HDMConfig

PRESETS: dict[str, HDMConfig] = {
    "natural": HDMConfig(
        stages=3,
        dm=DMConfig(benchmark_sizes=tuple((s, s) for s in range(6, 12)), scale_factors=(2, 3, 5),
                    gamma_percentile=0.25),
    ),
    "medical": HDMConfig(
        stages=1,
        dm=DMConfig(benchmark_sizes=tuple((s, s) for s in range(6, 10)), scale_factors=(2, 3),
                    gamma_percentile=0.30),
    ),
    "desk": HDMConfig(
        stages=3,
        dm=DMConfig(benchmark_sizes=((4, 4), (5, 5), (6, 6)), scale_factors=(2,), epochs=200),
        image_size=(32, 32),
        mean=(0.0,),
        std=(1.0,),
    ),
}

_HDM_KEYS = {"stages": "stages", "mix_epochs": "mix_epochs", "mix_learning_rate": "mix_learning_rate",
             "lambda": "lam", "v_init": "v_init", "image_size": "image_size", "mean": "mean", "std": "std",
             "score_mode": "score_mode"}
_DM_KEYS = {"benchmark_sizes", "scale_factors", "tau", "eta", "epochs", "learning_rate",
            "gamma_percentile", "clamp", "stack_mode", "eta_overrides"}


def preset(name: str) -> HDMConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _size(text: str) -> tuple[int, int]:
    parts = text.lower().replace(" ", "").split("x")
    if len(parts) == 1:
        parts = parts * 2
    if len(parts) != 2:
        raise ConfigError(f"bad size {text!r}; expected AxB")
    return int(parts[0]), int(parts[1])


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _overrides(text: str) -> dict[tuple[int, int, int], float]:
    out = {}
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        key, _, value = item.partition("=")
        idx = tuple(int(v) for v in key.split(":"))
        if len(idx) != 3 or not value:
            raise ConfigError(f"bad eta override {item!r}; expected i:j:k=value")
        out[idx] = float(value)
    return out


def _parse_dm(section, base: DMConfig) -> DMConfig:
    unknown = set(section) - _DM_KEYS
    if unknown:
        raise ConfigError(f"unknown [dm] keys: {sorted(unknown)}")
    kw: dict = {}
    if "benchmark_sizes" in section:
        kw["benchmark_sizes"] = tuple(_size(s) for s in section["benchmark_sizes"].split(",") if s.strip())
    if "scale_factors" in section:
        kw["scale_factors"] = tuple(int(v) for v in section["scale_factors"].split(",") if v.strip())
    for key in ("tau", "eta", "learning_rate", "gamma_percentile"):
        if key in section:
            kw[key] = section.getfloat(key)
    if "epochs" in section:
        kw["epochs"] = section.getint("epochs")
    if "clamp" in section:
        kw["clamp"] = section.getboolean("clamp")
    if "stack_mode" in section:
        kw["stack_mode"] = section["stack_mode"].strip()
    if "eta_overrides" in section:
        kw["eta_overrides"] = _overrides(section["eta_overrides"])
    return dataclasses.replace(base, **kw)


def parse_config(text: str, base: HDMConfig | None = None) -> HDMConfig:
    base = base or PRESETS["natural"]
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from exc
    extra = set(cp.sections()) - {"hdm", "dm"}
    if extra:
        raise ConfigError(f"unknown config sections: {sorted(extra)}")
    try:
        dm = _parse_dm(cp["dm"], base.dm) if cp.has_section("dm") else base.dm
        kw: dict = {"dm": dm}
        if cp.has_section("hdm"):
            sec = cp["hdm"]
            unknown = set(sec) - set(_HDM_KEYS)
            if unknown:
                raise ConfigError(f"unknown [hdm] keys: {sorted(unknown)}")
            for key in ("stages", "mix_epochs"):
                if key in sec:
                    kw[key] = sec.getint(key)
            for key in ("mix_learning_rate", "lambda", "v_init"):
                if key in sec:
                    kw[_HDM_KEYS[key]] = sec.getfloat(key)
            if "image_size" in sec:
                kw["image_size"] = _size(sec["image_size"])
            for key in ("mean", "std"):
                if key in sec:
                    kw[key] = _floats(sec[key])
            if "score_mode" in sec:
                kw["score_mode"] = sec["score_mode"].strip()
        return dataclasses.replace(base, **kw)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path: str | Path, base: HDMConfig | None = None) -> HDMConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base)


def format_config(cfg: HDMConfig) -> str:
    dm = cfg.dm
    lines = [
        "[hdm]",
        f"stages = {cfg.stages}",
        f"mix_epochs = {cfg.mix_epochs}",
        f"mix_learning_rate = {cfg.mix_learning_rate!r}",
        f"lambda = {cfg.lam!r}",
        f"v_init = {cfg.v_init!r}",
        f"image_size = {cfg.image_size[0]}x{cfg.image_size[1]}",
        "mean = " + ", ".join(repr(v) for v in cfg.mean),
        "std = " + ", ".join(repr(v) for v in cfg.std),
        f"score_mode = {cfg.score_mode}",
        "",
        "[dm]",
        "benchmark_sizes = " + ", ".join(f"{a}x{b}" for a, b in dm.benchmark_sizes),
        "scale_factors = " + ", ".join(str(t) for t in dm.scale_factors),
        f"tau = {dm.tau!r}",
        f"eta = {dm.eta!r}",
        f"epochs = {dm.epochs}",
        f"learning_rate = {dm.learning_rate!r}",
        f"gamma_percentile = {dm.gamma_percentile!r}",
        f"clamp = {str(dm.clamp).lower()}",
        f"stack_mode = {dm.stack_mode}",
        "eta_overrides = " + ", ".join(f"{i}:{j}:{k}={v!r}" for (i, j, k), v in dm.eta_overrides),
    ]
    return "\n".join(lines) + "\n"


def save_config(cfg: HDMConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(cfg))


__all__ = ["PRESETS", "IMAGENET_MEAN", "IMAGENET_STD", "preset", "parse_config", "load_config",
           "format_config", "save_config"]
