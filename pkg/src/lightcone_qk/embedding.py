"""Data re-uploading brickwork embedding and light-cone importance scores.

Each of the ``L`` layers re-uploads every feature with a one-qubit gate
``V(x_i)`` and then applies two-qubit blocks ``U(theta)`` on a brickwork
matching: odd layers pair ``(1,2), (3,4), ...``; even layers pair
``(2,3), ..., (n-2,n-1)`` and wrap ``(n,1)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import qsim
from .errors import ValidationError


@dataclass(frozen=True)
class GateFamily:
    """A choice of re-upload gate ``V`` and entangling block ``U``.

    ``upload`` maps an array of angles to an array of 2x2 unitaries;
    ``block`` maps a parameter vector of length ``params_per_block`` to a 4x4
    unitary.
    """

    name: str
    params_per_block: int
    upload: Callable[[np.ndarray], np.ndarray]
    block: Callable[[np.ndarray], np.ndarray]


def _ry_cz_block(theta):
    return np.kron(qsim.ry(theta[0]), qsim.ry(theta[1])) @ qsim.CZ


GATE_FAMILIES = {
    "ry_cz": GateFamily("ry_cz", 2, qsim.ry, _ry_cz_block),
}


def register_gate_family(family: GateFamily) -> None:
    GATE_FAMILIES[family.name] = family


def get_gate_family(name: str) -> GateFamily:
    try:
        return GATE_FAMILIES[name]
    except KeyError:
        raise ValidationError(
            f"unknown gate family {name!r}; known: {sorted(GATE_FAMILIES)}"
        ) from None


@dataclass(frozen=True)
class EmbeddingConfig:
    n: int
    L: int
    theta: np.ndarray
    gate_family: str = "ry_cz"
    seed: int | None = None

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValidationError(f"qubit count must be even and >= 2, got {self.n}")
        if self.n > qsim.MAX_QUBITS:
            raise ValidationError(f"qubit count above {qsim.MAX_QUBITS}")
        if self.L < 1:
            raise ValidationError(f"layer count must be >= 1, got {self.L}")
        family = get_gate_family(self.gate_family)
        theta = np.array(self.theta, dtype=float)
        expected = (self.L, self.n // 2, family.params_per_block)
        if theta.shape != expected:
            raise ValidationError(f"theta shape {theta.shape}, expected {expected}")
        if not np.all(np.isfinite(theta)):
            raise ValidationError("theta has non-finite entries")
        theta.flags.writeable = False
        object.__setattr__(self, "theta", theta)

    @classmethod
    def random(cls, n: int = 8, L: int = 4, seed: int | None = 0,
               gate_family: str = "ry_cz") -> "EmbeddingConfig":
        """Draw theta uniformly from ``[0, 2*pi)``."""
        p = get_gate_family(gate_family).params_per_block
        rng = np.random.default_rng(seed)
        theta = rng.uniform(0.0, 2 * np.pi, size=(L, n // 2, p))
        return cls(n, L, theta, gate_family, seed)

    def with_theta(self, theta: np.ndarray) -> "EmbeddingConfig":
        return replace(self, theta=np.array(theta, dtype=float))

    @property
    def family(self) -> GateFamily:
        return get_gate_family(self.gate_family)

    @property
    def layout(self) -> "BrickworkLayout":
        return BrickworkLayout(self.n, self.L)


@dataclass(frozen=True)
class BrickworkLayout:
    n: int
    L: int
    pairs: tuple = field(init=False)

    def __post_init__(self):
        if self.n < 2 or self.n % 2:
            raise ValidationError(f"qubit count must be even and >= 2, got {self.n}")
        if self.L < 1:
            raise ValidationError(f"layer count must be >= 1, got {self.L}")
        layers = []
        for layer in range(1, self.L + 1):
            if layer % 2:
                pairs = [(q, q + 1) for q in range(1, self.n, 2)]
            else:
                pairs = [(q, q + 1) for q in range(2, self.n - 1, 2)] + [(self.n, 1)]
            layers.append(tuple(pairs))
        object.__setattr__(self, "pairs", tuple(layers))

    def layer_pairs(self, layer: int) -> tuple:
        """Pairs of the 1-based ``layer``."""
        return self.pairs[layer - 1]


def build_embedding_circuit(cfg: EmbeddingConfig, x) -> qsim.Circuit:
    x = np.asarray(x, dtype=float)
    if x.shape != (cfg.n,):
        raise ValidationError(f"feature vector must have length {cfg.n}, got shape {x.shape}")
    family = cfg.family
    uploads = family.upload(x)
    circuit = qsim.Circuit(cfg.n)
    for layer in range(1, cfg.L + 1):
        for q in range(1, cfg.n + 1):
            circuit.add1(uploads[q - 1], q)
        for k, (a, b) in enumerate(cfg.layout.layer_pairs(layer)):
            circuit.add2(family.block(cfg.theta[layer - 1, k]), a, b)
    return circuit


def embed_states(cfg: EmbeddingConfig, X) -> np.ndarray:
    """Embedded statevectors for every row of ``X``, shape ``(m, 2**n)``.

    Equivalent to ``run_circuit(build_embedding_circuit(cfg, x))`` per row,
    but simulates all rows at once.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != cfg.n:
        raise ValidationError(f"expected {cfg.n} features, got {X.shape[1]}")
    m = X.shape[0]
    family = cfg.family
    uploads = family.upload(X)  # (m, n, 2, 2)
    blocks = [
        [family.block(cfg.theta[layer, k]) for k in range(cfg.n // 2)]
        for layer in range(cfg.L)
    ]
    psi = np.zeros((m, 2**cfg.n), dtype=complex)
    psi[:, 0] = 1.0
    for layer in range(1, cfg.L + 1):
        for q in range(1, cfg.n + 1):
            psi = qsim.apply_1q(psi, uploads[:, q - 1], q, cfg.n)
        for k, (a, b) in enumerate(cfg.layout.layer_pairs(layer)):
            psi = qsim.apply_2q(psi, blocks[layer - 1][k], a, b, cfg.n)
    return psi


def embed_densities(cfg: EmbeddingConfig, X) -> np.ndarray:
    """Per-qubit reduced density matrices, shape ``(m, n, 2, 2)``."""
    return qsim.reduced_densities(embed_states(cfg, X), cfg.n)


def lightcone_weights(layout: BrickworkLayout) -> np.ndarray:
    """Re-upload counts inside each measured qubit's backward light-cone.

    Entry ``[i-1, j-1]`` counts the layers whose ``V(x_j)`` lies in the past
    light-cone of the measurement on qubit ``i``. Walking backward, each layer
    first widens the cone by its two-qubit blocks (which act after the
    uploads), then counts the uploads on the widened set.
    """
    n = layout.n
    w = np.zeros((n, n), dtype=int)
    for i in range(1, n + 1):
        cone = {i}
        for layer in range(layout.L, 0, -1):
            for a, b in layout.layer_pairs(layer):
                if a in cone or b in cone:
                    cone.update((a, b))
            for j in cone:
                w[i - 1, j - 1] += 1
    return w


def importance_scores(w, lambdas) -> np.ndarray:
    """Light-cone importance ``P_j ~ sum_i w[i, j] * lambda_i``, normalised to sum to one."""
    w = np.asarray(w, dtype=float)
    lam = np.asarray(lambdas, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1] or lam.shape != (w.shape[0],):
        raise ValidationError(f"shape mismatch: w {w.shape}, lambdas {lam.shape}")
    if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-8:
        raise ValidationError("lambdas must be non-negative and sum to 1")
    raw = w.T @ lam
    total = raw.sum()
    if total <= 0:
        raise ValidationError("all importance scores are zero")
    return raw / total
