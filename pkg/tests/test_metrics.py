import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lightcone_qk.errors import ValidationError
from lightcone_qk.metrics import (
    ConfusionCounts, chi2_sf_df1, chi_square_vs_gt, classification_metrics,
    confusion, evaluate,
)

import oracles

counts = st.tuples(*[st.integers(0, 500)] * 4).filter(lambda c: sum(c) > 0)


def test_confusion_examples(rng):
    assert confusion([1, 0, 1], [1, 0, 1]) == ConfusionCounts(2, 0, 0, 1)
    c = confusion([1, 0, 1, 0], [0, 1, 0, 1])
    assert c.tp == 0 and c.tn == 0
    t = rng.integers(0, 2, 20)
    p = rng.integers(0, 2, 20)
    c = confusion(t, p)
    assert (c.tp, c.fp, c.fn, c.tn) == oracles.naive_confusion(t, p)
    assert c.total == 20


def test_confusion_errors():
    with pytest.raises(ValidationError):
        confusion([1, 0], [1])
    with pytest.raises(ValidationError):
        confusion([1, 2], [1, 0])
    with pytest.raises(ValidationError):
        confusion([], [])


def test_perfect_prediction():
    sen, spe, acc, f1, mcc = classification_metrics(ConfusionCounts(5, 0, 0, 5))
    assert (sen, spe, acc, f1) == (1, 1, 1, 1)
    assert mcc == 1.0


def test_figure_counts():
    sen, spe, acc, f1, mcc = classification_metrics(ConfusionCounts(tp=39, fp=155, fn=55, tn=212))
    assert sen == pytest.approx(float(Fraction(39, 94)), abs=1e-10)
    assert spe == pytest.approx(float(Fraction(212, 367)), abs=1e-10)
    assert acc == pytest.approx(float(Fraction(251, 461)), abs=1e-10)
    assert f1 == pytest.approx(float(Fraction(78, 78 + 155 + 55)), abs=1e-10)
    sen2, *_ = classification_metrics(ConfusionCounts(tp=67, fp=274, fn=27, tn=93))
    assert sen2 == pytest.approx(67 / 94, abs=1e-12)


def test_degenerate_denominators_flagged():
    flags = []
    sen, spe, acc, f1, mcc = classification_metrics(ConfusionCounts(0, 3, 0, 7), flags)
    assert sen == 0 and mcc == 0 and f1 == 0
    assert set(flags) == {"sen", "mcc"}
    with pytest.raises(ValidationError):
        classification_metrics(ConfusionCounts(0, 0, 0, 0))


@settings(max_examples=200, deadline=None)
@given(counts)
def test_metric_ranges_and_label_swap(c):
    cc = ConfusionCounts(*c)
    sen, spe, acc, f1, mcc = classification_metrics(cc)
    for v in (sen, spe, acc, f1):
        assert 0 <= v <= 1
    assert -1 - 1e-12 <= mcc <= 1 + 1e-12
    tp, fp, fn, tn = c
    sen2, spe2, acc2, _, mcc2 = classification_metrics(ConfusionCounts(tn, fn, fp, tp))
    assert (sen2, spe2) == (spe, sen)
    assert acc2 == acc
    assert abs(abs(mcc2) - abs(mcc)) < 1e-12


def test_chi_square_equal_marginals():
    chi2, p, phi = chi_square_vs_gt(ConfusionCounts(tp=10, fp=5, fn=5, tn=20))
    assert chi2 == 0 and p == 1.0 and phi == 0


def test_chi_square_critical_value():
    assert chi2_sf_df1(3.841) == pytest.approx(0.05, abs=5e-4)
    assert chi2_sf_df1(3.841) == pytest.approx(oracles.chi2_df1_tail_quad(3.841), abs=1e-9)


def test_chi_square_all_positive_predictions():
    # rows (50, 50) and (100, 0); expected (75, 25) in both rows
    chi2, p, phi = chi_square_vs_gt(ConfusionCounts(tp=50, fp=50, fn=0, tn=0))
    hand = 2 * (25**2 / 75 + 25**2 / 25)
    assert chi2 == pytest.approx(hand, rel=1e-12)
    assert p == pytest.approx(oracles.chi2_df1_tail_quad(hand), rel=1e-6, abs=1e-20)
    assert phi == pytest.approx(math.sqrt(hand / 200), rel=1e-12)


def test_chi_square_zero_expected_cell():
    flags = []
    assert chi_square_vs_gt(ConfusionCounts(10, 0, 0, 0), flags) == (0.0, 1.0, 0.0)
    assert flags == ["chi2"]


def test_p_value_matches_numeric_integration():
    for x in np.linspace(0, 50, 201):
        assert abs(chi2_sf_df1(x) - oracles.chi2_df1_tail_quad(x)) < 1e-6


def test_p_value_strictly_decreasing():
    xs = np.linspace(0.01, 50, 500)
    ps = [chi2_sf_df1(x) for x in xs]
    assert all(b < a for a, b in zip(ps, ps[1:]))


@settings(max_examples=200, deadline=None)
@given(counts)
def test_chi_square_row_symmetry(c):
    tp, fp, fn, tn = c
    a = chi_square_vs_gt(ConfusionCounts(tp, fp, fn, tn))
    b = chi_square_vs_gt(ConfusionCounts(tp, fn, fp, tn))
    assert a[0] == pytest.approx(b[0], rel=1e-12, abs=1e-12)
    assert a[2] >= 0 and 0 <= a[1] <= 1


def test_evaluate_report():
    rep = evaluate([1, 1, 0, 0], [1, 0, 0, 0])
    assert rep.sen == 0.5 and rep.spe == 1.0 and rep.acc == 0.75
    assert rep.metric_sum == pytest.approx(rep.sen + rep.spe + rep.acc + rep.f1 + rep.mcc)
