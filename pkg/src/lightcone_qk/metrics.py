"""Binary classification metrics and the chi-square comparison against ground truth.

Label 1 is the positive (methane) class, 0 the background.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValidationError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricReport:
    sen: float
    spe: float
    acc: float
    f1: float
    mcc: float
    chi2: float
    p_value: float
    phi: float
    degenerate: tuple = field(default=())

    @property
    def metric_sum(self) -> float:
        return self.sen + self.spe + self.acc + self.f1 + self.mcc


def confusion(y_true, y_pred) -> ConfusionCounts:
    t = np.asarray(y_true)
    p = np.asarray(y_pred)
    if t.shape != p.shape or t.ndim != 1 or t.size == 0:
        raise ValidationError(f"label arrays must be equal-length 1-d, got {t.shape} and {p.shape}")
    for arr in (t, p):
        if not np.all(np.isin(arr, (0, 1))):
            raise ValidationError("labels must be 0 or 1")
    t = t.astype(bool)
    p = p.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(t & p)),
        fp=int(np.sum(~t & p)),
        fn=int(np.sum(t & ~p)),
        tn=int(np.sum(~t & ~p)),
    )


def _ratio(num, den, name, flags):
    if den == 0:
        flags.append(name)
        return 0.0
    return num / den


def classification_metrics(c: ConfusionCounts, flags: list | None = None):
    """``(sen, spe, acc, f1, mcc)``; a metric with a zero denominator is 0 and its name goes to ``flags``."""
    if c.total == 0:
        raise ValidationError("confusion counts are all zero")
    flags = [] if flags is None else flags
    sen = _ratio(c.tp, c.tp + c.fn, "sen", flags)
    spe = _ratio(c.tn, c.tn + c.fp, "spe", flags)
    acc = (c.tp + c.tn) / c.total
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, "f1", flags)
    den = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if den == 0:
        flags.append("mcc")
        mcc = 0.0
    else:
        mcc = (c.tp * c.tn - c.fp * c.fn) / math.sqrt(den)
    return sen, spe, acc, f1, mcc


def chi2_sf_df1(x: float) -> float:
    """Survival function of the chi-square distribution with one degree of freedom."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


def chi_square_vs_gt(c: ConfusionCounts, flags: list | None = None):
    """Pearson chi-square homogeneity test of predicted vs ground-truth label counts.

    Rows are (GT positives, GT negatives) and (predicted positives, predicted
    negatives); df = 1, no continuity correction. Returns ``(chi2, p, phi)``
    with ``phi = sqrt(chi2 / (2 * total))``.
    """
    if c.total == 0:
        raise ValidationError("confusion counts are all zero")
    flags = [] if flags is None else flags
    table = np.array(
        [[c.tp + c.fn, c.fp + c.tn], [c.tp + c.fp, c.fn + c.tn]], dtype=float
    )
    grand = table.sum()
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / grand
    if np.any(expected == 0):
        flags.append("chi2")
        return 0.0, 1.0, 0.0
    chi2 = float(np.sum((table - expected) ** 2 / expected))
    return chi2, chi2_sf_df1(chi2), math.sqrt(chi2 / grand)


def evaluate(y_true, y_pred) -> MetricReport:
    c = confusion(y_true, y_pred)
    flags: list = []
    sen, spe, acc, f1, mcc = classification_metrics(c, flags)
    chi2, p, phi = chi_square_vs_gt(c, flags)
    return MetricReport(sen, spe, acc, f1, mcc, chi2, p, phi, tuple(flags))
