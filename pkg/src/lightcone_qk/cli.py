"""Command-line entry point: ``lightcone-qk {grid,importance,synth,validate}``."""
from __future__ import annotations

import argparse
import logging
import sys
import time

import yaml

from . import data as D
from .errors import LoadError, ValidationError
from .experiment import (
    ExperimentConfig, MODELS, SynthParams, emit_report, format_grid_text,
    format_importance_text, run_grid, run_importance_study,
)

EXIT_OK, EXIT_ERROR, EXIT_FAILED_CELLS = 0, 1, 2


def _models(text):
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in MODELS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown models {bad}; choose from {MODELS}")
    return tuple(names)


def _features(text):
    return tuple(int(f) for f in text.split(",") if f.strip())


def _gamma(text):
    return text if text == "auto" else float(text)


def _add_synth_args(p):
    p.add_argument("--n-images", type=int, default=None)
    p.add_argument("--superpixels-per-image", type=int, default=None)
    p.add_argument("--methane-fraction", type=float, default=None)
    p.add_argument("--class-separation", type=float, default=None)


def _add_experiment_args(p):
    p.add_argument("--config", help="YAML/JSON experiment config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", help="feature table (split into train/test pools by image)")
    src.add_argument("--synth", action="store_true", help="use generated data")
    p.add_argument("--test-data", help="separate test-pool table; --data is then the training pool")
    _add_synth_args(p)
    p.add_argument("--models", type=_models, help="comma list of linear,rbf,quantum")
    p.add_argument("--features", type=_features, help="comma list of feature ids 0..8")
    p.add_argument("--trials", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--svm-c", type=float)
    p.add_argument("--rbf-gamma", type=_gamma, help="'auto' or a positive number")
    p.add_argument("--grid-search", action="store_true", default=None,
                   help="choose C (and RBF gamma) by 5-fold CV on the training sample")
    p.add_argument("--optimize-theta", action="store_true", default=None)
    p.add_argument("--workers", type=int, help="cells evaluated concurrently")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lightcone-qk",
                                     description="Light-cone feature selection experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_experiment_args(sub.add_parser("grid", help="leave-one-feature-out grid over all models"))
    _add_experiment_args(sub.add_parser("importance", help="light-cone importance study"))

    p = sub.add_parser("synth", help="write a synthetic feature table")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_synth_args(p)

    p = sub.add_parser("validate", help="check a feature table")
    p.add_argument("--data", required=True)
    return parser


def _synth_overrides(args) -> dict:
    keys = ("n_images", "superpixels_per_image", "methane_fraction", "class_separation")
    return {k: getattr(args, k) for k in keys if getattr(args, k) is not None}


def config_from_args(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    for key in ("seed", "out_dir", "data", "test_data", "models", "features", "trials",
                "layers", "svm_c", "rbf_gamma", "grid_search", "optimize_theta", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if args.synth:
        raw["data"] = None
    synth = dict(raw.get("synth") or {})
    synth.update(_synth_overrides(args))
    if synth or raw.get("data") is None:
        synth.setdefault("seed", raw.get("seed", 0))
        raw["synth"] = synth
    return ExperimentConfig.from_dict(raw)


def _cmd_experiment(args, importance: bool) -> int:
    cfg = config_from_args(args)
    started = time.perf_counter()
    if importance:
        rows, cells = run_importance_study(cfg)
        emit_report(cells, cfg.out_dir, cfg, importance_rows=rows, started=started)
        print(format_importance_text(rows), end="")
    else:
        cells = run_grid(cfg)
        emit_report(cells, cfg.out_dir, cfg, started=started)
        print(format_grid_text(cells), end="")
    failed = sum(not c.ok for c in cells)
    if failed:
        print(f"{failed} of {len(cells)} cells failed; see {cfg.out_dir}/results.csv", file=sys.stderr)
        return EXIT_FAILED_CELLS
    return EXIT_OK


def _cmd_synth(args) -> int:
    params = SynthParams(seed=args.seed, **_synth_overrides(args))
    ds = D.synth_generate(params.n_images, params.superpixels_per_image,
                          params.methane_fraction, params.class_separation, params.seed)
    D.save_table(ds, args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        ds = D.load_table(args.data)
    except LoadError as exc:
        for line, msg in exc.problems:
            print(f"{args.data}:{line}: {msg}", file=sys.stderr)
        return EXIT_ERROR
    n_methane = int((ds.labels == D.METHANE).sum())
    images = len({r.image_id for r in ds.records})
    print(f"{len(ds)} records, {images} images, {n_methane} methane, {len(ds) - n_methane} background")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "grid":
            return _cmd_experiment(args, importance=False)
        if args.command == "importance":
            return _cmd_experiment(args, importance=True)
        if args.command == "synth":
            return _cmd_synth(args)
        return _cmd_validate(args)
    except (ValidationError, LoadError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
