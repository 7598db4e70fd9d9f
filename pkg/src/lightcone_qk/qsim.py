"""Dense statevector simulator.

Qubits are labelled ``1..n`` and qubit 1 is the most significant bit of the
amplitude index, so ``|q1 q2 ... qn>`` maps to index ``q1*2**(n-1) + ... + qn``.

The array-level helpers (``apply_1q``, ``apply_2q``, ``reduced_densities``)
work on stacks of states of shape ``(batch, 2**n)`` and accept either one
shared gate or one gate per batch entry; ``embedding`` uses them to simulate a
whole data set in one pass. The public ``StateVector`` functions wrap them for
single states.
"""
from __future__ import annotations

import contextlib
import os
from dataclasses import dataclass, field
from typing import Iterator, Union

import numpy as np

from .errors import ValidationError

MAX_QUBITS = 12
_ATOL = 1e-10

_validate = os.environ.get("LIGHTCONE_QK_VALIDATE", "") not in ("", "0")


def set_validation(enabled: bool) -> None:
    """Turn unitarity and density-matrix checks on or off globally."""
    global _validate
    _validate = bool(enabled)


def validation_enabled() -> bool:
    return _validate


@contextlib.contextmanager
def validation(enabled: bool = True) -> Iterator[None]:
    global _validate
    previous = _validate
    _validate = bool(enabled)
    try:
        yield
    finally:
        _validate = previous


# -- gates -------------------------------------------------------------------

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
CZ = np.diag([1, 1, 1, -1]).astype(complex)


def ry(angle):
    """Y-rotation ``exp(-i angle Y / 2)``; vectorised over ``angle``."""
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle / 2)
    s = np.sin(angle / 2)
    out = np.empty(angle.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def check_unitary(u: np.ndarray, atol: float = _ATOL) -> None:
    u = np.asarray(u)
    dim = u.shape[-1]
    if u.shape[-2] != dim:
        raise ValidationError(f"gate must be square, got shape {u.shape}")
    prod = u @ np.conj(np.swapaxes(u, -1, -2))
    if not np.allclose(prod, np.eye(dim), atol=atol, rtol=0):
        raise ValidationError("gate is not unitary")


def _check_qubit(q: int, n: int) -> None:
    if not (1 <= q <= n):
        raise IndexError(f"qubit {q} out of range 1..{n}")


# -- array-level kernels -------------------------------------------------------


def apply_1q(psi: np.ndarray, u: np.ndarray, target: int, n: int) -> np.ndarray:
    """Apply ``u`` (shape ``(2, 2)`` or ``(batch, 2, 2)``) to ``target`` of each row of ``psi``."""
    _check_qubit(target, n)
    if _validate:
        check_unitary(u)
    batch = psi.shape[0]
    view = psi.reshape(batch, 2 ** (target - 1), 2, 2 ** (n - target))
    if u.ndim == 2:
        out = np.einsum("ij,bajc->baic", u, view)
    else:
        out = np.einsum("bij,bajc->baic", u, view)
    return out.reshape(batch, 2**n)


def apply_2q(psi: np.ndarray, u: np.ndarray, a: int, b: int, n: int) -> np.ndarray:
    """Apply a 4x4 gate to qubits ``(a, b)``; ``a`` is the high bit of the gate basis."""
    _check_qubit(a, n)
    _check_qubit(b, n)
    if a == b:
        raise ValidationError("two-qubit gate needs distinct qubits")
    if _validate:
        check_unitary(u)
    batch = psi.shape[0]
    tensor = psi.reshape((batch,) + (2,) * n)
    moved = np.moveaxis(tensor, (a, b), (-2, -1))
    shape = moved.shape
    flat = moved.reshape(batch, -1, 4)
    if u.ndim == 2:
        flat = np.einsum("ij,bkj->bki", u, flat)
    else:
        flat = np.einsum("bij,bkj->bki", u, flat)
    back = np.moveaxis(flat.reshape(shape), (-2, -1), (a, b))
    return np.ascontiguousarray(back).reshape(batch, 2**n)


def reduced_densities(psi: np.ndarray, n: int) -> np.ndarray:
    """One-qubit reduced density matrices for every row and qubit, shape ``(batch, n, 2, 2)``."""
    batch = psi.shape[0]
    out = np.empty((batch, n, 2, 2), dtype=complex)
    for q in range(1, n + 1):
        view = psi.reshape(batch, 2 ** (q - 1), 2, 2 ** (n - q))
        out[:, q - 1] = np.einsum("baic,bajc->bij", view, np.conj(view))
    return out


# -- single-state API --------------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    n: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if not (1 <= self.n <= MAX_QUBITS):
            raise ValidationError(f"qubit count must be in 1..{MAX_QUBITS}, got {self.n}")
        if amps.shape[0] != 2**self.n:
            raise ValidationError(
                f"expected {2 ** self.n} amplitudes for {self.n} qubits, got {amps.shape[0]}"
            )
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def zeros(cls, n: int) -> "StateVector":
        amps = np.zeros(2**n, dtype=complex)
        amps[0] = 1.0
        return cls(n, amps)

    def norm(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)


@dataclass(frozen=True)
class Gate1:
    u: np.ndarray
    target: int


@dataclass(frozen=True)
class Gate2:
    u: np.ndarray
    a: int
    b: int


Gate = Union[Gate1, Gate2]


@dataclass
class Circuit:
    n: int
    gates: list = field(default_factory=list)

    def __post_init__(self):
        if not (1 <= self.n <= MAX_QUBITS):
            raise ValidationError(f"qubit count must be in 1..{MAX_QUBITS}, got {self.n}")
        for g in self.gates:
            self._check(g)

    def _check(self, g: Gate) -> None:
        if isinstance(g, Gate1):
            _check_qubit(g.target, self.n)
        else:
            _check_qubit(g.a, self.n)
            _check_qubit(g.b, self.n)
            if g.a == g.b:
                raise ValidationError("two-qubit gate needs distinct qubits")

    def add1(self, u: np.ndarray, target: int) -> "Circuit":
        g = Gate1(np.asarray(u, dtype=complex), target)
        self._check(g)
        self.gates.append(g)
        return self

    def add2(self, u: np.ndarray, a: int, b: int) -> "Circuit":
        g = Gate2(np.asarray(u, dtype=complex), a, b)
        self._check(g)
        self.gates.append(g)
        return self


def apply_single(state: StateVector, u: np.ndarray, target: int) -> StateVector:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValidationError(f"single-qubit gate must be 2x2, got {u.shape}")
    psi = apply_1q(state.amplitudes[None, :], u, target, state.n)
    return StateVector(state.n, psi[0])


def apply_two(state: StateVector, u: np.ndarray, a: int, b: int) -> StateVector:
    u = np.asarray(u, dtype=complex)
    if u.shape != (4, 4):
        raise ValidationError(f"two-qubit gate must be 4x4, got {u.shape}")
    psi = apply_2q(state.amplitudes[None, :], u, a, b, state.n)
    return StateVector(state.n, psi[0])


def run_circuit(c: Circuit) -> StateVector:
    """Apply the gates of ``c`` in order to ``|0...0>``."""
    psi = np.zeros((1, 2**c.n), dtype=complex)
    psi[0, 0] = 1.0
    for g in c.gates:
        if isinstance(g, Gate1):
            psi = apply_1q(psi, g.u, g.target, c.n)
        else:
            psi = apply_2q(psi, g.u, g.a, g.b, c.n)
    return StateVector(c.n, psi[0])


def check_density(rho: np.ndarray, atol: float = _ATOL) -> None:
    rho = np.asarray(rho)
    if not np.allclose(rho, np.conj(rho.T), atol=atol, rtol=0):
        raise ValidationError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > atol:
        raise ValidationError("density matrix trace differs from 1")
    if np.linalg.eigvalsh(rho).min() < -atol:
        raise ValidationError("density matrix has a negative eigenvalue")


def reduced_density(state: StateVector, qubit: int) -> np.ndarray:
    """Partial trace of ``|psi><psi|`` onto ``qubit``."""
    _check_qubit(qubit, state.n)
    view = state.amplitudes.reshape(2 ** (qubit - 1), 2, 2 ** (state.n - qubit))
    rho = np.einsum("aic,ajc->ij", view, np.conj(view))
    if _validate:
        check_density(rho)
    return rho


def trace_product(a: np.ndarray, b: np.ndarray) -> float:
    """``Tr[a b]`` for two one-qubit density matrices."""
    if _validate:
        check_density(a)
        check_density(b)
    value = np.einsum("ij,ji->", a, b)
    if abs(value.imag) > _ATOL:
        raise ValidationError(f"trace product has imaginary part {value.imag:.3g}")
    return float(value.real)
