"""Local projected quantum kernels, centered alignment and classical Gram matrices."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .embedding import EmbeddingConfig, embed_densities
from .errors import ValidationError

log = logging.getLogger(__name__)

PSD_TOL = 1e-8


# -- quantum local kernels -----------------------------------------------------


def local_grams(rho_a: np.ndarray, rho_b: np.ndarray | None = None) -> np.ndarray:
    """Per-qubit kernels ``Tr[rho_a^i rho_b^i]`` from cached density matrices.

    ``rho_a`` has shape ``(m_a, n, 2, 2)``; the result has shape ``(n, m_a, m_b)``.
    """
    square = rho_b is None
    if square:
        rho_b = rho_a
    if rho_a.shape[1:] != rho_b.shape[1:]:
        raise ValidationError(f"density stacks differ: {rho_a.shape} vs {rho_b.shape}")
    grams = np.einsum("aijk,bikj->iab", rho_a, rho_b).real
    if square:
        grams = 0.5 * (grams + np.swapaxes(grams, 1, 2))
    return np.ascontiguousarray(grams)


def quantum_gram_stack(X, cfg: EmbeddingConfig, X_other=None) -> np.ndarray:
    """Local quantum Gram matrices, shape ``(n, m, m)`` (or ``(n, m, m_other)``).

    Each sample is embedded once and all of its one-qubit reductions are
    reused for every kernel entry.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != cfg.n:
        raise ValidationError(f"expected {cfg.n} features, got {X.shape[1]}")
    rho_a = embed_densities(cfg, X)
    if X_other is None:
        return local_grams(rho_a)
    X_other = np.atleast_2d(np.asarray(X_other, dtype=float))
    if X_other.shape[1] != cfg.n:
        raise ValidationError(f"expected {cfg.n} features, got {X_other.shape[1]}")
    return local_grams(rho_a, embed_densities(cfg, X_other))


# -- alignment and weights -------------------------------------------------------


def _center(K: np.ndarray) -> np.ndarray:
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def alignment_with_flag(K, y) -> tuple[float, bool]:
    """Centered alignment of ``K`` with ``y y^T`` plus a degenerate-kernel flag.

    Returns ``(0.0, True)`` when either centered matrix vanishes.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    m = y.shape[0]
    if K.shape != (m, m):
        raise ValidationError(f"kernel shape {K.shape} does not match {m} labels")
    if m < 2:
        raise ValidationError("centered alignment needs at least two samples")
    Kc = _center(K)
    Yc = _center(np.outer(y, y))
    norm_k = np.linalg.norm(Kc)
    norm_y = np.linalg.norm(Yc)
    scale = max(1.0, np.linalg.norm(K))
    if norm_k <= 1e-12 * scale or norm_y <= 1e-12:
        return 0.0, True
    value = float(np.sum(Kc * Yc) / (norm_k * norm_y))
    return min(1.0, max(-1.0, value)), False


def centered_alignment(K, y) -> float:
    return alignment_with_flag(K, y)[0]


class Lambdas(NamedTuple):
    weights: np.ndarray
    alignments: np.ndarray
    fallback: bool


def compute_lambdas(grams, y) -> Lambdas:
    """Combination weights proportional to the positive part of each kernel's alignment.

    Falls back to uniform weights when no kernel aligns positively.
    """
    alignments = np.array([centered_alignment(K, y) for K in grams])
    return lambdas_from_alignments(alignments)


def lambdas_from_alignments(alignments) -> Lambdas:
    alignments = np.asarray(alignments, dtype=float)
    positive = np.clip(alignments, 0.0, None)
    total = positive.sum()
    if total <= 0:
        log.warning("no local kernel has positive alignment; using uniform weights")
        n = alignments.shape[0]
        return Lambdas(np.full(n, 1.0 / n), alignments, True)
    return Lambdas(positive / total, alignments, False)


@dataclass(frozen=True)
class KernelStack:
    grams: np.ndarray
    lambdas: np.ndarray

    def __post_init__(self):
        grams = np.asarray(self.grams, dtype=float)
        lam = np.asarray(self.lambdas, dtype=float)
        if grams.ndim != 3 or lam.shape != (grams.shape[0],):
            raise ValidationError(f"shape mismatch: grams {grams.shape}, lambdas {lam.shape}")
        if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-10:
            raise ValidationError("lambdas must lie on the probability simplex")
        object.__setattr__(self, "grams", grams)
        object.__setattr__(self, "lambdas", lam)


def combine_kernels(stack: KernelStack) -> np.ndarray:
    return np.tensordot(stack.lambdas, stack.grams, axes=1)


# -- classical kernels --------------------------------------------------------


def _pair(X_a, X_b):
    X_a = np.atleast_2d(np.asarray(X_a, dtype=float))
    X_b = X_a if X_b is None else np.atleast_2d(np.asarray(X_b, dtype=float))
    if X_a.shape[1] != X_b.shape[1]:
        raise ValidationError(f"feature counts differ: {X_a.shape[1]} vs {X_b.shape[1]}")
    return X_a, X_b


def linear_gram(X_a, X_b=None) -> np.ndarray:
    X_a, X_b = _pair(X_a, X_b)
    return X_a @ X_b.T


def rbf_gram(X_a, X_b=None, gamma: float = 1.0) -> np.ndarray:
    if not gamma > 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    square = X_b is None
    X_a, X_b = _pair(X_a, X_b)
    sq = (
        np.sum(X_a**2, axis=1)[:, None]
        + np.sum(X_b**2, axis=1)[None, :]
        - 2.0 * X_a @ X_b.T
    )
    K = np.exp(-gamma * np.clip(sq, 0.0, None))
    if square:
        np.fill_diagonal(K, 1.0)
    return K


def default_gamma(X_train) -> float:
    """``1 / (n_features * var(X))``; 1.0 for constant data."""
    X = np.atleast_2d(np.asarray(X_train, dtype=float))
    var = X.var()
    if var <= 0:
        return 1.0
    return 1.0 / (X.shape[1] * var)


def min_eigenvalue(K) -> float:
    return float(np.linalg.eigvalsh(0.5 * (K + K.T)).min())


# -- theta optimisation ------------------------------------------------------


def combined_alignment(cfg: EmbeddingConfig, X, y) -> float:
    """Alignment of the lambda-weighted combined quantum kernel on ``(X, y)``."""
    grams = quantum_gram_stack(X, cfg)
    lam = compute_lambdas(grams, y)
    return centered_alignment(combine_kernels(KernelStack(grams, lam.weights)), y)


def alignment_gradient(cfg: EmbeddingConfig, X, y, h: float = 1e-4,
                       free=None) -> np.ndarray:
    """Central finite-difference gradient of ``combined_alignment`` w.r.t. theta.

    ``free`` is an optional boolean mask of theta's shape; masked-out entries
    get a zero gradient.
    """
    theta = np.array(cfg.theta)
    grad = np.zeros_like(theta)
    mask = np.ones(theta.shape, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    for idx in zip(*np.nonzero(mask)):
        up = theta.copy()
        down = theta.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (
            combined_alignment(cfg.with_theta(up), X, y)
            - combined_alignment(cfg.with_theta(down), X, y)
        ) / (2 * h)
    return grad


def optimize_theta(cfg: EmbeddingConfig, X, y, steps: int = 10, step_size: float = 0.1,
                   h: float = 1e-4, free=None) -> tuple[EmbeddingConfig, list[float]]:
    """Gradient ascent on combined-kernel alignment; returns the config and the alignment trace.

    A step is kept only if it improves the alignment; otherwise the step size
    is halved.
    """
    current = combined_alignment(cfg, X, y)
    if not np.isfinite(current):
        raise FloatingPointError("initial alignment is not finite")
    trace = [current]
    for _ in range(steps):
        grad = alignment_gradient(cfg, X, y, h=h, free=free)
        candidate = cfg.with_theta(cfg.theta + step_size * grad)
        value = combined_alignment(candidate, X, y)
        if not np.isfinite(value):
            raise FloatingPointError(f"alignment became non-finite at step {len(trace)}")
        if value > current:
            cfg, current = candidate, value
        else:
            step_size *= 0.5
        trace.append(current)
    return cfg, trace


# -- text export ---------------------------------------------------------------


def save_grams(path, grams) -> None:
    """Write a Gram stack as text: header ``m n_kernels`` then one matrix row per line."""
    grams = np.asarray(grams, dtype=float)
    if grams.ndim == 2:
        grams = grams[None]
    n_kernels, m, cols = grams.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{m} {n_kernels}\n")
        for K in grams:
            for row in K:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_grams(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        m, n_kernels = (int(v) for v in fh.readline().split())
        rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    data = np.array(rows, dtype=float)
    if data.shape[0] != m * n_kernels:
        raise ValidationError(f"expected {m * n_kernels} rows, found {data.shape[0]}")
    return data.reshape(n_kernels, m, -1)
