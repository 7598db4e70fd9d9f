"""Leave-one-feature-out experiment grid and importance study.

Feature identifiers: ``F = 0`` is the no-mag1c view over bands 1-8;
``F = j >= 1`` puts mag1c in place of band ``j``. Each (trial, F, model)
cell is an isolated pipeline whose randomness comes from seeds derived from
the base seed, so cells can run in any order or concurrently.

Seed derivation: ``SeedSequence(entropy=base_seed, spawn_key=(trial, F,
crc32(stream)))``, where ``stream`` names the consumer ("train", "test",
"split", or a model name). Adding or removing a model never shifts the
randomness of other cells.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import platform
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from .embedding import EmbeddingConfig, embed_densities, importance_scores, lightcone_weights
from .errors import ValidationError
from .kernels import (
    KernelStack, combine_kernels, compute_lambdas, default_gamma, linear_gram,
    local_grams, optimize_theta, rbf_gram,
)
from .metrics import MetricReport, evaluate
from .svm import predict, train_precomputed

log = logging.getLogger(__name__)

MODELS = ("linear", "rbf", "quantum")
MODEL_LABELS = {"linear": "SVM_L", "rbf": "SVM_RBF", "quantum": "SVM_Q"}
ALL_FEATURE_IDS = tuple(range(D.N_BANDS + 1))
N_QUBITS = 8


@dataclass
class SynthParams:
    n_images: int = 20
    superpixels_per_image: int = 100
    methane_fraction: float = 0.2
    class_separation: float = 3.0
    seed: int = 0


@dataclass
class ExperimentConfig:
    data: str | None = None
    test_data: str | None = None
    synth: SynthParams | None = None
    test_fraction: float = 0.5
    models: tuple = MODELS
    layers: int = 4
    gate_family: str = "ry_cz"
    svm_c: float = 1.0
    rbf_gamma: float | str = "auto"
    grid_search: bool = False
    per_class: int = 15
    features: tuple = ALL_FEATURE_IDS
    trials: int = 1
    seed: int = 0
    out_dir: str = "results"
    optimize_theta: bool = False
    theta_steps: int = 10
    theta_step_size: float = 0.1
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.synth, dict):
            self.synth = SynthParams(**self.synth)
        self.models = tuple(self.models)
        self.features = tuple(int(f) for f in self.features)
        unknown = [m for m in self.models if m not in MODELS]
        if unknown or not self.models:
            raise ValidationError(f"unknown or empty model list: {unknown or self.models}")
        bad = [f for f in self.features if f not in ALL_FEATURE_IDS]
        if bad or not self.features:
            raise ValidationError(f"feature ids must be in 0..{D.N_BANDS}, got {self.features}")
        if self.trials < 1:
            raise ValidationError("trial count must be >= 1")
        if self.layers < 1:
            raise ValidationError("layer count must be >= 1")
        if not self.svm_c > 0:
            raise ValidationError("SVM C must be positive")
        if self.rbf_gamma != "auto" and not float(self.rbf_gamma) > 0:
            raise ValidationError("rbf_gamma must be 'auto' or positive")
        if self.data is None and self.synth is None:
            self.synth = SynthParams(seed=self.seed)
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class GridCellResult:
    model: str
    feature_id: int
    trial: int = 0
    report: MetricReport | None = None
    feature_names: tuple = ()
    lambdas: np.ndarray | None = None
    alignments: np.ndarray | None = None
    importance: np.ndarray | None = None
    seeds: dict = field(default_factory=dict)
    flags: tuple = ()
    wall_clock: float = 0.0
    error: str | None = None

    @property
    def mag1c(self) -> bool:
        return self.feature_id != 0

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def feature_ids(self) -> tuple:
        """9-vector indices of the features used, in qubit order."""
        return D.feature_indices(self.mag1c, self.feature_id)


def derive_seed(base_seed: int, trial: int, feature_id: int, stream: str) -> int:
    ss = np.random.SeedSequence(
        entropy=int(base_seed), spawn_key=(int(trial), int(feature_id), zlib.crc32(stream.encode()))
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- data --------------------------------------------------------------------


def load_pools(cfg: ExperimentConfig):
    """Training pool and test pool for the configured data source."""
    if cfg.data is not None:
        full = D.load_table(cfg.data)
        if cfg.test_data is not None:
            return full, D.load_table(cfg.test_data)
    else:
        s = cfg.synth
        full = D.synth_generate(s.n_images, s.superpixels_per_image, s.methane_fraction,
                                s.class_separation, s.seed)
    return D.split_by_image(full, cfg.test_fraction, derive_seed(cfg.seed, 0, 0, "split"))


@dataclass
class CellData:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    train_ids: list
    feature_names: tuple
    seeds: dict


def prepare_cell_data(cfg: ExperimentConfig, pools, trial: int, feature_id: int) -> CellData:
    train_pool, test_pool = pools
    use_mag1c = feature_id != 0
    train_view = D.select_features(train_pool, use_mag1c, feature_id)
    test_view = D.select_features(test_pool, use_mag1c, feature_id)
    stats = D.fit_scaling(train_view)
    seeds = {
        "train": derive_seed(cfg.seed, trial, feature_id, "train"),
        "test": derive_seed(cfg.seed, trial, feature_id, "test"),
    }
    train = D.apply_scaling(stats, D.sample_training(train_view, cfg.per_class, seeds["train"]))
    test = D.apply_scaling(stats, D.build_balanced_test(test_view, seeds["test"]))
    return CellData(
        train.X, 2 * train.labels - 1, test.X, test.labels,
        train.ids, train_view.feature_names, seeds,
    )


# -- model fitting -------------------------------------------------------------


def _cv_folds(y, k, seed):
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=int)
    for label in (-1, 1):
        idx = rng.permutation(np.flatnonzero(y == label))
        folds[idx] = np.arange(idx.size) % k
    return folds


def _cv_accuracy(K, y, C, folds) -> float:
    correct = 0
    for f in np.unique(folds):
        tr, te = folds != f, folds == f
        if np.unique(y[tr]).size < 2:
            continue
        model = train_precomputed(K[np.ix_(tr, tr)], y[tr], C)
        labels, _ = predict(model, K[np.ix_(te, tr)])
        correct += int(np.sum(labels == y[te]))
    return correct / len(y)


def _select_hyperparams(kernel_fn, params, C_grid, y, seed):
    folds = _cv_folds(y, 5, seed)
    best = None
    for p in params:
        K = kernel_fn(p)
        for C in C_grid:
            acc = _cv_accuracy(K, y, C, folds)
            if best is None or acc > best[0]:
                best = (acc, p, C)
    return best[1], best[2]


C_GRID = (0.1, 1.0, 10.0, 100.0)
GAMMA_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)


def run_cell(cfg: ExperimentConfig, pools, model: str, feature_id: int, trial: int = 0) -> GridCellResult:
    """Train and evaluate one (model, feature id) cell; failures are recorded, not raised."""
    start = time.perf_counter()
    result = GridCellResult(model=model, feature_id=feature_id, trial=trial)
    try:
        cd = prepare_cell_data(cfg, pools, trial, feature_id)
        result.feature_names = cd.feature_names
        result.seeds = dict(cd.seeds)
        flags = []
        C = cfg.svm_c
        if model == "linear":
            K_train = linear_gram(cd.X_train)
            K_test = linear_gram(cd.X_test, cd.X_train)
            if cfg.grid_search:
                _, C = _select_hyperparams(lambda _: K_train, [None], C_GRID, cd.y_train,
                                           derive_seed(cfg.seed, trial, feature_id, "cv"))
        elif model == "rbf":
            gamma = default_gamma(cd.X_train) if cfg.rbf_gamma == "auto" else float(cfg.rbf_gamma)
            if cfg.grid_search:
                gamma, C = _select_hyperparams(
                    lambda g: rbf_gram(cd.X_train, gamma=g),
                    [gamma * f for f in GAMMA_FACTORS], C_GRID, cd.y_train,
                    derive_seed(cfg.seed, trial, feature_id, "cv"),
                )
            result.seeds["gamma"] = gamma
            K_train = rbf_gram(cd.X_train, gamma=gamma)
            K_test = rbf_gram(cd.X_test, cd.X_train, gamma=gamma)
        else:
            theta_seed = derive_seed(cfg.seed, trial, feature_id, model)
            result.seeds["theta"] = theta_seed
            emb = EmbeddingConfig.random(N_QUBITS, cfg.layers, theta_seed, cfg.gate_family)
            if cd.X_train.shape[1] != emb.n:
                raise ValidationError(f"quantum model needs {emb.n} features")
            if cfg.optimize_theta:
                emb, trace = optimize_theta(emb, cd.X_train, cd.y_train,
                                            cfg.theta_steps, cfg.theta_step_size)
                log.info("theta optimisation: alignment %.4f -> %.4f", trace[0], trace[-1])
            rho_train = embed_densities(emb, cd.X_train)
            grams = local_grams(rho_train)
            lam = compute_lambdas(grams, cd.y_train)
            if lam.fallback:
                flags.append("uniform_lambda")
            K_train = combine_kernels(KernelStack(grams, lam.weights))
            if cfg.grid_search:
                _, C = _select_hyperparams(lambda _: K_train, [None], C_GRID, cd.y_train,
                                           derive_seed(cfg.seed, trial, feature_id, "cv"))
            test_grams = local_grams(embed_densities(emb, cd.X_test), rho_train)
            K_test = combine_kernels(KernelStack(test_grams, lam.weights))
            result.lambdas = lam.weights
            result.alignments = lam.alignments
            result.importance = importance_scores(lightcone_weights(emb.layout), lam.weights)
        result.seeds["C"] = C
        svm_model = train_precomputed(K_train, cd.y_train, C, sample_ids=cd.train_ids)
        if not svm_model.converged:
            flags.append("svm_not_converged")
        labels, _ = predict(svm_model, K_test)
        report = evaluate(cd.y_test, (labels > 0).astype(int))
        flags.extend(report.degenerate)
        result.report = report
        result.flags = tuple(flags)
    except Exception as exc:  # recorded as a failed cell
        log.exception("cell %s F=%d trial=%d failed", model, feature_id, trial)
        result.error = f"{type(exc).__name__}: {exc}"
    result.wall_clock = time.perf_counter() - start
    return result


def _run_cells(cfg, pools, jobs):
    if cfg.workers == 1:
        results = [run_cell(cfg, pools, *job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda job: run_cell(cfg, pools, *job), jobs))
    order = {m: k for k, m in enumerate(MODELS)}
    return sorted(results, key=lambda r: (r.trial, r.feature_id, order[r.model]))


def run_grid(cfg: ExperimentConfig) -> list[GridCellResult]:
    """One cell per (trial, feature id, model)."""
    pools = load_pools(cfg)
    jobs = [(m, f, t) for t in range(cfg.trials) for f in cfg.features for m in cfg.models]
    return _run_cells(cfg, pools, jobs)


# -- importance study ------------------------------------------------------------


@dataclass
class ImportanceRow:
    feature: int
    name: str
    mean_p: float
    std_p: float
    mean_s: float
    std_s: float
    n_cells: int


def aggregate_importance(cells: list[GridCellResult]) -> list[ImportanceRow]:
    """Per-feature mean/std of importance score and metric sum over the cells that used it.

    Sorted by mean importance, descending.
    """
    p_vals = {j: [] for j in ALL_FEATURE_IDS}
    s_vals = {j: [] for j in ALL_FEATURE_IDS}
    for cell in cells:
        if not cell.ok or cell.importance is None:
            continue
        for pos, j in enumerate(cell.feature_ids):
            p_vals[j].append(float(cell.importance[pos]))
            s_vals[j].append(cell.report.metric_sum)
    rows = []
    for j in ALL_FEATURE_IDS:
        if not p_vals[j]:
            continue
        p = np.array(p_vals[j])
        s = np.array(s_vals[j])
        rows.append(ImportanceRow(
            j, D.FEATURE_COLUMNS[j], float(p.mean()),
            float(p.std(ddof=1)) if p.size > 1 else float("nan"),
            float(s.mean()),
            float(s.std(ddof=1)) if s.size > 1 else float("nan"),
            int(p.size),
        ))
    rows.sort(key=lambda r: (-r.mean_p, r.feature))
    return rows


def run_importance_study(cfg: ExperimentConfig):
    """Quantum cells for every configured feature id and trial; returns ``(rows, cells)``."""
    pools = load_pools(cfg)
    jobs = [("quantum", f, t) for t in range(cfg.trials) for f in cfg.features]
    cells = _run_cells(cfg, pools, jobs)
    return aggregate_importance(cells), cells


# -- reports -----------------------------------------------------------------------


def _num(v) -> str:
    return "nan" if v is None or not np.isfinite(v) else f"{v:.12g}"


def _vec(v) -> str:
    return "" if v is None else " ".join(_num(float(x)) for x in v)


GRID_HEADER = ("trial", "model", "mag1c", "F", "status", "SEN", "SPE", "ACC", "F1", "MCC",
               "chi2", "p_value", "phi", "features", "lambdas", "importance", "flags", "error")


def format_grid_csv(results) -> str:
    lines = [",".join(GRID_HEADER)]
    for r in results:
        m = r.report
        vals = [m.sen, m.spe, m.acc, m.f1, m.mcc, m.chi2, m.p_value, m.phi] if m else [None] * 8
        row = [str(r.trial), MODEL_LABELS[r.model], str(int(r.mag1c)), str(r.feature_id),
               "ok" if r.ok else "failed"]
        row += [_num(v) for v in vals]
        row += [" ".join(r.feature_names), _vec(r.lambdas), _vec(r.importance),
                " ".join(r.flags), (r.error or "").replace(",", ";").replace("\n", " ")]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def format_grid_text(results) -> str:
    head = f"{'Trial':>5} {'Model':>8} {'mag1c':>5} {'F':>2} " + " ".join(
        f"{c:>7}" for c in ("SEN", "SPE", "ACC", "F1", "MCC", "p-value", "Phi"))
    lines = [head, "-" * len(head)]
    for r in results:
        prefix = f"{r.trial:>5} {MODEL_LABELS[r.model]:>8} {'yes' if r.mag1c else 'no':>5} {r.feature_id:>2} "
        if r.report is None:
            lines.append(prefix + f"FAILED: {r.error}")
            continue
        m = r.report
        cells = [m.sen, m.spe, m.acc, m.f1, m.mcc, m.p_value, m.phi]
        lines.append(prefix + " ".join(f"{v:>7.3f}" for v in cells))
    return "\n".join(lines) + "\n"


IMPORTANCE_HEADER = ("feature", "name", "mean_P", "std_P", "mean_S", "std_S", "n_cells")


def format_importance_csv(rows) -> str:
    lines = [",".join(IMPORTANCE_HEADER)]
    for r in rows:
        lines.append(",".join([str(r.feature), r.name, _num(r.mean_p), _num(r.std_p),
                               _num(r.mean_s), _num(r.std_s), str(r.n_cells)]))
    return "\n".join(lines) + "\n"


def format_importance_text(rows) -> str:
    def cell(mean, std, digits):
        return f"{mean:.{digits}f} ({std:.{digits}f})".rjust(16)

    lines = [
        "j       " + "".join(f"{r.feature:>16}" for r in rows),
        "<P_j>   " + "".join(cell(r.mean_p, r.std_p, 3) for r in rows),
        "<S_j>   " + "".join(cell(r.mean_s, r.std_s, 2) for r in rows),
        "cells   " + "".join(f"{r.n_cells:>16}" for r in rows),
    ]
    return "\n".join(lines) + "\n"


def emit_report(results, out_dir, cfg: ExperimentConfig | None = None,
                importance_rows=None, started: float | None = None) -> dict:
    """Write the results tables and a run manifest; returns the written paths.

    ``results.csv`` / ``results.txt`` hold the grid cells; with
    ``importance_rows`` also ``importance.csv`` / ``importance.txt``. Timings
    live only in ``manifest.json`` so the tables are reproducible byte for
    byte.
    """
    results = list(results)
    if not results:
        raise ValidationError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    contents = {
        "results.csv": format_grid_csv(results),
        "results.txt": format_grid_text(results),
    }
    if importance_rows is not None:
        contents["importance.csv"] = format_importance_csv(importance_rows)
        contents["importance.txt"] = format_importance_text(importance_rows)
    manifest = {
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict() if cfg is not None else None,
        "cells": [
            {"trial": r.trial, "model": r.model, "F": r.feature_id, "ok": r.ok,
             "seeds": r.seeds, "wall_clock_s": round(r.wall_clock, 6)}
            for r in results
        ],
        "total_wall_clock_s": None if started is None else round(time.perf_counter() - started, 6),
        "failed_cells": sum(not r.ok for r in results),
    }
    contents["manifest.json"] = json.dumps(manifest, indent=1, default=str) + "\n"
    paths = {}
    for name, text in contents.items():
        path = out / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        paths[name] = path
    return paths
