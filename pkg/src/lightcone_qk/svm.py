"""C-SVM dual solver for precomputed kernels.

Solves ``min_a 0.5 a^T Q a - sum(a)`` with ``Q_ij = y_i y_j K_ij``,
``0 <= a_i <= C`` and ``sum(a_i y_i) = 0`` by sequential minimal optimisation
with the maximal-violating-pair working set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

TAU = 1e-12


@dataclass
class SvmModel:
    alphas: np.ndarray
    bias: float
    C: float
    y: np.ndarray
    sample_ids: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alphas > 0)

    def decision_function(self, K_test_train) -> np.ndarray:
        K = np.atleast_2d(np.asarray(K_test_train, dtype=float))
        if K.shape[1] != self.alphas.shape[0]:
            raise ValidationError(
                f"kernel has {K.shape[1]} columns, model has {self.alphas.shape[0]} training samples"
            )
        return K @ (self.alphas * self.y) + self.bias


def dual_objective(alphas, K, y) -> float:
    """Maximisation-form dual ``sum(a) - 0.5 a^T Q a``."""
    ay = np.asarray(alphas) * np.asarray(y)
    return float(np.sum(alphas) - 0.5 * ay @ np.asarray(K) @ ay)


def _check_problem(K, y, C):
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    m = y.shape[0]
    if K.shape != (m, m):
        raise ValidationError(f"kernel shape {K.shape} does not match {m} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValidationError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValidationError("training labels contain a single class")
    if not C > 0:
        raise ValidationError(f"C must be positive, got {C}")
    scale = max(1.0, float(np.abs(K).max()))
    if not np.allclose(K, K.T, atol=1e-10 * scale, rtol=0):
        raise ValidationError("kernel matrix is not symmetric")
    min_eig = np.linalg.eigvalsh(0.5 * (K + K.T)).min()
    if min_eig < -1e-8:
        raise ValidationError(f"kernel matrix is not PSD (min eigenvalue {min_eig:.3g})")
    return 0.5 * (K + K.T), y


def train_precomputed(K, y, C: float = 1.0, tol: float = 1e-4, max_passes: int = 10_000,
                      sample_ids=None, objective_trace: list | None = None) -> SvmModel:
    """Train on an ``m x m`` Gram matrix with labels in ``{-1, +1}``.

    Stops when the maximal KKT violation drops below ``tol`` or after
    ``max_passes * m`` pair updates (``converged`` is then False). When
    ``objective_trace`` is a list, the dual objective after every update is
    appended to it.
    """
    K, y = _check_problem(K, y, C)
    m = y.shape[0]
    Q = (y[:, None] * y[None, :]) * K
    alpha = np.zeros(m)
    grad = -np.ones(m)
    converged = False
    it = 0
    max_iter = max_passes * m
    while it < max_iter:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        score = -y * grad
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        if score[i] - score[j] < tol:
            converged = True
            break
        it += 1

        old_i, old_j = alpha[i], alpha[j]
        quad = max(Q[i, i] + Q[j, j] - 2 * y[i] * y[j] * Q[i, j], TAU)
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += Q[:, i] * (ai - old_i) + Q[:, j] * (aj - old_j)
        if objective_trace is not None:
            # grad = Q a - 1, so  sum(a) - 0.5 a^T Q a = -0.5 a^T (grad - 1)
            objective_trace.append(float(-0.5 * alpha @ (grad - 1.0)))

    bias = -_rho(alpha, grad, y, C)
    ids = list(range(m)) if sample_ids is None else list(sample_ids)
    return SvmModel(alpha, bias, float(C), y, ids, converged, it)


def _rho(alpha, grad, y, C) -> float:
    yg = y * grad
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean())
    ub, lb = np.inf, -np.inf
    to_ub = (at_upper & (y < 0)) | (at_lower & (y > 0))
    to_lb = (at_upper & (y > 0)) | (at_lower & (y < 0))
    if to_ub.any():
        ub = yg[to_ub].min()
    if to_lb.any():
        lb = yg[to_lb].max()
    return float((ub + lb) / 2)


def predict(model: SvmModel, K_test_train) -> tuple[np.ndarray, np.ndarray]:
    """Labels in ``{-1, +1}`` and decision values; ``decision == 0`` maps to -1."""
    decision = model.decision_function(K_test_train)
    labels = np.where(decision > 0, 1, -1)
    return labels, decision


def save_model(path, model: SvmModel) -> None:
    record = {
        "C": model.C,
        "bias": model.bias,
        "alphas": [float(a) for a in model.alphas],
        "labels": [int(v) for v in model.y],
        "sample_ids": [str(s) for s in model.sample_ids],
        "converged": model.converged,
        "iterations": model.iterations,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh, indent=1)
        fh.write("\n")


def load_model(path) -> SvmModel:
    with open(path, encoding="utf-8") as fh:
        record = json.load(fh)
    return SvmModel(
        alphas=np.array(record["alphas"], dtype=float),
        bias=float(record["bias"]),
        C=float(record["C"]),
        y=np.array(record["labels"], dtype=float),
        sample_ids=record["sample_ids"],
        converged=record["converged"],
        iterations=record["iterations"],
    )
