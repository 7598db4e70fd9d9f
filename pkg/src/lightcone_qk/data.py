"""Superpixel feature tables: I/O, scaling, sampling and feature views.

Table format (UTF-8, LF, comma separated, header required)::

    image_id,superpixel_id,mag1c,b460,b550,b640,b2004,b2109,b2310,b2350,b2360,label,pixel_count

Feature index 0 is the mag1c enhancement average, indices 1-8 the band
averages in the column order above. Labels: 1 methane, 0 background.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import LoadError, ValidationError

FEATURE_COLUMNS = ("mag1c", "b460", "b550", "b640", "b2004", "b2109", "b2310", "b2350", "b2360")
COLUMNS = ("image_id", "superpixel_id") + FEATURE_COLUMNS + ("label", "pixel_count")
N_BANDS = 8
METHANE, BACKGROUND = 1, 0


@dataclass(frozen=True)
class SuperpixelRecord:
    image_id: str
    superpixel_id: int
    features: tuple
    label: int
    pixel_count: int = 1

    @property
    def key(self) -> tuple:
        return (self.image_id, self.superpixel_id)


@dataclass(frozen=True)
class Dataset:
    records: tuple
    split: str = "pool"
    feature_names: tuple = FEATURE_COLUMNS

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen = set()
        for r in self.records:
            if r.key in seen:
                raise ValidationError(f"duplicate superpixel id {r.key} in split {self.split!r}")
            seen.add(r.key)
            if len(r.features) != len(self.feature_names):
                raise ValidationError(
                    f"record {r.key} has {len(r.features)} features, expected {len(self.feature_names)}"
                )

    def __len__(self) -> int:
        return len(self.records)

    @cached_property
    def X(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, len(self.feature_names)))
        return np.array([r.features for r in self.records], dtype=float)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=int)

    @property
    def ids(self) -> list:
        return [f"{r.image_id}:{r.superpixel_id}" for r in self.records]

    def subset(self, indices, split: str | None = None) -> "Dataset":
        return Dataset(
            tuple(self.records[i] for i in indices),
            self.split if split is None else split,
            self.feature_names,
        )


# -- I/O -----------------------------------------------------------------------


def load_table(path, split: str = "pool") -> Dataset:
    problems = []
    records = []
    seen = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError([(1, "missing header row")]) from None
        header = [h.strip() for h in header]
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise LoadError([(1, f"missing columns: {', '.join(missing)}")])
        pos = {c: header.index(c) for c in COLUMNS}
        for row in reader:
            line = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                problems.append((line, f"expected {len(header)} fields, got {len(row)}"))
                continue
            try:
                rec = _parse_row(row, pos)
            except ValueError as exc:
                problems.append((line, str(exc)))
                continue
            if rec.key in seen:
                problems.append((line, f"duplicate id {rec.key} (first on line {seen[rec.key]})"))
                continue
            seen[rec.key] = line
            records.append(rec)
    if problems:
        raise LoadError(problems)
    return Dataset(tuple(records), split)


def _parse_row(row, pos) -> SuperpixelRecord:
    image_id = row[pos["image_id"]].strip()
    if not image_id:
        raise ValueError("empty image_id")
    try:
        sp_id = int(row[pos["superpixel_id"]])
    except ValueError:
        raise ValueError(f"superpixel_id {row[pos['superpixel_id']]!r} is not an integer") from None
    feats = []
    for col in FEATURE_COLUMNS:
        raw = row[pos[col]]
        try:
            v = float(raw)
        except ValueError:
            raise ValueError(f"{col} value {raw!r} is not numeric") from None
        if not math.isfinite(v):
            raise ValueError(f"{col} value {raw!r} is not finite")
        feats.append(v)
    raw_label = row[pos["label"]].strip()
    if raw_label not in ("0", "1"):
        raise ValueError(f"label {raw_label!r} is not 0 or 1")
    try:
        count = int(row[pos["pixel_count"]])
    except ValueError:
        raise ValueError(f"pixel_count {row[pos['pixel_count']]!r} is not an integer") from None
    if count < 1:
        raise ValueError(f"pixel_count {count} is not positive")
    return SuperpixelRecord(image_id, sp_id, tuple(feats), int(raw_label), count)


def save_table(ds: Dataset, path) -> None:
    if ds.feature_names != FEATURE_COLUMNS:
        raise ValidationError("only full 9-feature datasets can be written as tables")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_table(ds))


def format_table(ds: Dataset) -> str:
    lines = [",".join(COLUMNS)]
    for r in ds.records:
        fields = [r.image_id, str(r.superpixel_id)]
        fields += [repr(float(v)) for v in r.features]
        fields += [str(r.label), str(r.pixel_count)]
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


# -- scaling ---------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingStats:
    mins: np.ndarray
    maxs: np.ndarray
    low: float = 0.0
    high: float = math.pi

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        span = self.maxs - self.mins
        constant = span <= 0
        safe = np.where(constant, 1.0, span)
        out = self.low + (X - self.mins) / safe * (self.high - self.low)
        out = np.where(constant, 0.5 * (self.low + self.high), out)
        return np.clip(out, self.low, self.high)


def fit_scaling(train: Dataset) -> ScalingStats:
    if len(train) == 0:
        raise ValidationError("cannot fit scaling on an empty dataset")
    X = train.X
    return ScalingStats(X.min(axis=0), X.max(axis=0))


def apply_scaling(stats: ScalingStats, ds: Dataset) -> Dataset:
    X = stats.transform(ds.X)
    records = tuple(replace(r, features=tuple(float(v) for v in row))
                    for r, row in zip(ds.records, X))
    return Dataset(records, ds.split, ds.feature_names)


# -- sampling ---------------------------------------------------------------------


def _class_indices(ds: Dataset, label: int) -> np.ndarray:
    return np.flatnonzero(ds.labels == label) if len(ds) else np.zeros(0, dtype=int)


def sample_training(pool: Dataset, per_class: int = 15, seed=None) -> Dataset:
    """``per_class`` records of each label drawn uniformly without replacement."""
    rng = np.random.default_rng(seed)
    chosen = []
    for label in (METHANE, BACKGROUND):
        idx = _class_indices(pool, label)
        if idx.size < per_class:
            name = "methane" if label == METHANE else "background"
            raise ValidationError(
                f"need {per_class} {name} records, pool has {idx.size} (short by {per_class - idx.size})"
            )
        chosen.append(rng.choice(idx, size=per_class, replace=False))
    return pool.subset(np.sort(np.concatenate(chosen)), split="train")


def build_balanced_test(pool: Dataset, seed=None) -> Dataset:
    """Every methane record plus an equal-size random draw of background records."""
    methane = _class_indices(pool, METHANE)
    background = _class_indices(pool, BACKGROUND)
    if methane.size == 0:
        raise ValidationError("test pool has no methane records")
    if background.size < methane.size:
        raise ValidationError(
            f"test pool has {background.size} background records, need {methane.size}"
        )
    rng = np.random.default_rng(seed)
    drawn = rng.choice(background, size=methane.size, replace=False)
    return pool.subset(np.sort(np.concatenate([methane, drawn])), split="test")


def split_by_image(ds: Dataset, test_fraction: float = 0.5, seed=None):
    """Partition records into ``(train, test)`` pools by whole images."""
    if not 0 < test_fraction < 1:
        raise ValidationError("test_fraction must lie in (0, 1)")
    images = sorted({r.image_id for r in ds.records})
    if len(images) < 2:
        raise ValidationError("need at least two images to split by image")
    rng = np.random.default_rng(seed)
    n_test = min(len(images) - 1, max(1, round(test_fraction * len(images))))
    test_images = set(rng.choice(images, size=n_test, replace=False).tolist())
    train_idx = [k for k, r in enumerate(ds.records) if r.image_id not in test_images]
    test_idx = [k for k, r in enumerate(ds.records) if r.image_id in test_images]
    return ds.subset(train_idx, "train_pool"), ds.subset(test_idx, "test_pool")


# -- feature views ---------------------------------------------------------------


def feature_indices(use_mag1c: bool, removed_band: int) -> tuple:
    """Column indices (into the 9-feature vector) of a leave-one-feature-out view.

    ``removed_band == 0`` is the no-mag1c view over bands 1-8; otherwise mag1c
    replaces band ``removed_band``.
    """
    if removed_band == 0:
        if use_mag1c:
            raise ValidationError("feature id 0 is the no-mag1c view; use_mag1c must be False")
        return tuple(range(1, N_BANDS + 1))
    if not 1 <= removed_band <= N_BANDS:
        raise ValidationError(f"removed band must be in 0..{N_BANDS}, got {removed_band}")
    if not use_mag1c:
        raise ValidationError("removing a band requires use_mag1c=True")
    return (0,) + tuple(b for b in range(1, N_BANDS + 1) if b != removed_band)


def select_features(ds: Dataset, use_mag1c: bool, removed_band: int) -> Dataset:
    if ds.feature_names != FEATURE_COLUMNS:
        raise ValidationError("feature selection needs the full 9-feature vectors")
    cols = feature_indices(use_mag1c, removed_band)
    records = tuple(replace(r, features=tuple(r.features[c] for c in cols)) for r in ds.records)
    return Dataset(records, ds.split, tuple(FEATURE_COLUMNS[c] for c in cols))


# -- synthetic data ---------------------------------------------------------------

# background means and standard deviations; mag1c is an enhancement in ppm*m,
# bands are radiance-like.
_BG_MEAN = np.array([150.0, 6.2, 5.8, 5.1, 1.30, 1.10, 0.70, 0.62, 0.58])
_BG_STD = np.array([120.0, 0.60, 0.55, 0.50, 0.13, 0.11, 0.07, 0.065, 0.06])
# class-mean gap per feature, in units of class_separation * std; mag1c largest.
_GAP = np.array([1.0, 0.40, 0.45, 0.50, -0.55, -0.60, -0.80, -0.85, -0.75])


def synth_generate(n_images: int = 20, superpixels_per_image: int = 100,
                   methane_fraction: float = 0.2, class_separation: float = 3.0,
                   seed=0) -> Dataset:
    """Two-class diagonal Gaussian superpixel table.

    The methane class mean is shifted from background by
    ``class_separation * gap_j * std_j`` per feature, with the largest gap on
    mag1c. Each image holds ``round(methane_fraction * superpixels_per_image)``
    methane superpixels (at least one).
    """
    if n_images < 1 or superpixels_per_image < 2:
        raise ValidationError("need at least one image with two superpixels")
    if not 0 < methane_fraction < 1:
        raise ValidationError("methane_fraction must lie in (0, 1)")
    if class_separation < 0:
        raise ValidationError("class_separation must be non-negative")
    rng = np.random.default_rng(seed)
    n_methane = min(superpixels_per_image - 1,
                    max(1, round(methane_fraction * superpixels_per_image)))
    records = []
    for img in range(n_images):
        labels = np.zeros(superpixels_per_image, dtype=int)
        labels[:n_methane] = METHANE
        labels = rng.permutation(labels)
        noise = rng.standard_normal((superpixels_per_image, len(FEATURE_COLUMNS)))
        shift = class_separation * _GAP * _BG_STD
        feats = _BG_MEAN + noise * _BG_STD + labels[:, None] * shift
        counts = rng.integers(40, 1500, size=superpixels_per_image)
        for k in range(superpixels_per_image):
            records.append(SuperpixelRecord(
                f"img{img:04d}", k, tuple(float(v) for v in feats[k]),
                int(labels[k]), int(counts[k]),
            ))
    return Dataset(tuple(records), "pool")
