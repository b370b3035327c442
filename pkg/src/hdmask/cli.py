"""Command-line entry point: ``hdmask {explain,evaluate,render,testbed}``.

Exit codes: 0 success, 2 usage, 3 bad input (missing / malformed files,
shape mismatches), 4 bad configuration, 5 numeric failure during optimization,
6 model lacks a required capability, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import importlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import _interp
from .config import format_config, load_config, preset
from .errors import CapabilityError, ConfigError, FormatError, HDMError, InputError, NumericError
from .gateway import load_image
from .hierarchy import HDMConfig, explain
from .metrics import ALL_METRICS, evaluate_manifest, write_report
from .render import render, save_png
from .saliency_io import SaliencyRecord, load_saliency, save_saliency
from .testbed import LinearClassifier, export_dataset, fit_linear, generate_dataset

log = logging.getLogger("hdmask")

CONFIG_ENV = "HDMASK_CONFIG"

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_INPUT, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CAPABILITY = 0, 1, 2, 3, 4, 5, 6


def load_model(spec: str):
    """Load a classifier handle from a ``.npz`` linear model or a ``module:factory`` path."""
    if ":" in spec and not Path(spec).exists():
        module_name, _, attr = spec.partition(":")
        try:
            obj = getattr(importlib.import_module(module_name), attr)
        except (ImportError, AttributeError) as exc:
            raise InputError(f"cannot import model factory {spec!r}: {exc}") from exc
        return obj() if callable(obj) and not hasattr(obj, "scores") else obj
    return LinearClassifier.load(spec)


def resolve_config(args) -> HDMConfig:
    cfg = preset(args.preset)
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        cfg = load_config(path, base=cfg)
    if getattr(args, "stages", None) is not None:
        cfg = dataclasses.replace(cfg, stages=args.stages)
    return cfg


def _display_image(path: Path, cfg: HDMConfig) -> np.ndarray:
    return np.clip(_interp.resize(load_image(path).pixels, *cfg.image_size), 0.0, 1.0)


def cmd_explain(args) -> int:
    cfg = resolve_config(args)
    model = load_model(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for image_path in map(Path, args.images):
        raw = load_image(image_path)
        result = explain(model, raw, cfg)
        stem = image_path.stem
        display = _display_image(image_path, cfg)
        save_saliency(SaliencyRecord(result.mixed_mask, "hdm", result.target, str(image_path)), out / f"{stem}.sal")
        for mode in ("heatmap", "overlay", "mask"):
            save_png(render(display, result.mixed_mask, mode, args.alpha), out / f"{stem}.{mode}.png")
        for n, mask in enumerate(result.stage_masks, 1):
            save_saliency(SaliencyRecord(mask, f"dm-stage{n}", result.target, str(image_path)),
                          out / f"{stem}.stage{n}.sal")
            save_png(render(display, mask, "heatmap"), out / f"{stem}.stage{n}.heatmap.png")
            save_png(render(display, mask, "overlay", args.alpha), out / f"{stem}.stage{n}.overlay.png")
        run_log = {
            "image": str(image_path),
            "target": result.target,
            "weight_params": result.weight_params.tolist(),
            "weights": result.weights.tolist(),
            "gammas": [r.gamma for r in result.stage_results],
            "config": format_config(cfg),
            "traces": result.traces(),
        }
        (out / f"{stem}.log.json").write_text(json.dumps(run_log, indent=1, sort_keys=True))
        log.info("%s: class %d, weights %s", image_path, result.target, np.round(result.weights, 4).tolist())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    model = load_model(args.model)
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    records = evaluate_manifest(model, args.manifest, args.saliency_dir, image_size=cfg.image_size,
                                mean=cfg.mean, std=cfg.std, metrics=metrics, score=args.score, jobs=args.jobs)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_report(records, out)
    agg = records[-1]
    log.info("evaluated %d images: %s", agg["count"],
             ", ".join(f"{k}={v:.4g}" for k, v in agg.items() if isinstance(v, float)))
    return EXIT_OK


def cmd_render(args) -> int:
    record = load_saliency(args.saliency)
    if args.mode == "heatmap" and args.image is None:
        img = None
    else:
        if args.image is None:
            raise InputError(f"mode {args.mode!r} needs an image")
        img = load_image(args.image).pixels
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(render(img, record, args.mode, args.alpha), out)
    return EXIT_OK


def cmd_testbed(args) -> int:
    ds = generate_dataset(args.seed, num_classes=args.classes, mode=args.patch_mode)
    model = fit_linear(ds)
    out = Path(args.out)
    manifest = export_dataset(ds, out, limit=args.limit)
    model.save(out / "model.npz")
    log.info("wrote %s and %s", manifest, out / "model.npz")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdmask", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model=True):
        p.add_argument("--preset", default="natural", help="natural | medical | desk (default: natural)")
        p.add_argument("--config", help=f"config file overriding the preset (default: ${CONFIG_ENV})")
        p.add_argument("--seed", type=int, default=0)
        if model:
            p.add_argument("--model", required=True, help="linear model .npz or module:factory")

    p = sub.add_parser("explain", parents=[shared], help="compute hierarchical dynamic masks for images")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--stages", type=int)
    p.add_argument("--alpha", type=float, default=0.5)
    common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("evaluate", parents=[shared], help="faithfulness / localization metrics over a manifest")
    p.add_argument("manifest")
    p.add_argument("--saliency-dir", required=True)
    p.add_argument("--out", required=True, help="report file (JSON lines)")
    p.add_argument("--metrics", default=",".join(ALL_METRICS))
    p.add_argument("--score", choices=("probability", "logit"), default="probability")
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("render", parents=[shared], help="render a saliency file as heatmap / overlay / mask image")
    p.add_argument("saliency")
    p.add_argument("image", nargs="?")
    p.add_argument("--mode", choices=("heatmap", "overlay", "mask"), default="overlay")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("testbed", parents=[shared], help="write a planted-patch dataset, manifest and linear model")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--patch-mode", choices=("single", "dual"), default="single")
    p.add_argument("--limit", type=int, help="export only the first N images")
    p.set_defaults(func=cmd_testbed)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(getattr(args, "seed", 0))
    try:
        return args.func(args)
    except (InputError, FormatError) as exc:
        print(f"hdmask: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ConfigError as exc:
        print(f"hdmask: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"hdmask: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CapabilityError as exc:
        print(f"hdmask: model error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except HDMError as exc:
        print(f"hdmask: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
