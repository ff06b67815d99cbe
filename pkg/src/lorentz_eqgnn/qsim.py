"""Dense statevector simulation for small registers.

Qubit 0 is the most significant bit of the amplitude index, so the basis
state |q0 q1 ... q_{n-1}> sits at index sum(q_k * 2**(n-1-k)).

The ``*_batch`` kernels act on arrays of shape (B, 2**n) holding B independent
states and accept per-row angles; the single-state API is a thin wrapper.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

MAX_QUBITS = 12

ROTATIONS = frozenset({"RX", "RY", "RZ"})
PARAMETRIC = frozenset({"RX", "RY", "RZ", "CRZ"})
ONE_QUBIT = frozenset({"H", "RX", "RY", "RZ"})
TWO_QUBIT = frozenset({"CNOT", "CRZ", "SWAP"})
GATE_KINDS = ONE_QUBIT | TWO_QUBIT


class GateError(ValueError):
    pass


@dataclass(frozen=True)
class GateOp:
    """One gate. ``param`` optionally tags which logical angle feeds it."""

    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None
    param: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if self.kind not in GATE_KINDS:
            raise GateError(f"unknown gate kind {self.kind!r}")
        arity = 1 if self.kind in ONE_QUBIT else 2
        if len(self.qubits) != arity:
            raise GateError(f"{self.kind} acts on {arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != arity:
            raise GateError(f"{self.kind} qubits must be distinct, got {self.qubits}")
        if (self.angle is None) == (self.kind in PARAMETRIC):
            raise GateError(f"{self.kind}: angle must be given iff the gate is parametric")
        if self.param is not None and self.kind not in PARAMETRIC:
            raise GateError(f"{self.kind} cannot carry a trainable angle")

    def with_angle(self, angle: float) -> GateOp:
        return GateOp(self.kind, self.qubits, angle, self.param)

    def to_json(self) -> dict:
        return {"kind": self.kind, "qubits": list(self.qubits), "angle": self.angle}

    @classmethod
    def from_json(cls, rec: dict) -> GateOp:
        return cls(rec["kind"], tuple(rec["qubits"]), rec.get("angle"))


@dataclass
class StateVector:
    n_qubits: int
    amps: np.ndarray

    def norm(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2


def _check_n(n_qubits: int) -> None:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise GateError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")


def init_zero(n_qubits: int) -> StateVector:
    _check_n(n_qubits)
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def zero_batch(batch: int, n_qubits: int) -> np.ndarray:
    _check_n(n_qubits)
    amps = np.zeros((batch, 2**n_qubits), dtype=np.complex128)
    amps[:, 0] = 1.0
    return amps


# batched kernels ---------------------------------------------------------------

def _index(n: int, fixed: dict[int, int]) -> tuple:
    idx = [slice(None)] * (n + 1)
    for q, bit in fixed.items():
        idx[q + 1] = bit
    return tuple(idx)


def _row_param(angle, batch: int, n_free: int):
    """Angle as scalar, or shaped (B, 1, ..., 1) to broadcast over a slice."""
    a = np.asarray(angle, dtype=np.float64)
    if a.ndim == 0:
        return float(a)
    if a.shape != (batch,):
        raise GateError(f"per-row angles must have shape ({batch},), got {a.shape}")
    return a.reshape((batch,) + (1,) * n_free)


def apply_1q_batch(amps: np.ndarray, n: int, qubit: int, matrix) -> np.ndarray:
    """Apply a 2x2 matrix (entries scalar or per-row arrays) to ``qubit``."""
    b = amps.shape[0]
    v = amps.reshape((b,) + (2,) * n)
    i0, i1 = _index(n, {qubit: 0}), _index(n, {qubit: 1})
    a0, a1 = v[i0], v[i1]
    (m00, m01), (m10, m11) = matrix
    out = np.empty_like(v)
    out[i0] = m00 * a0 + m01 * a1
    out[i1] = m10 * a0 + m11 * a1
    return out.reshape(b, -1)


def _rotation_entries(kind: str, angle):
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if kind == "RX":
        return (c, -1j * s), (-1j * s, c)
    if kind == "RY":
        return (c, -s), (s, c)
    raise GateError(kind)


_H = 1.0 / math.sqrt(2.0)


def apply_gate_batch(amps: np.ndarray, n: int, kind: str, qubits: Sequence[int], angle=None) -> np.ndarray:
    """Apply one gate to every row of ``amps``; returns a new array."""
    for q in qubits:
        if not 0 <= q < n:
            raise IndexError(f"qubit {q} out of range for {n}-qubit register")
    b = amps.shape[0]
    if kind == "H":
        return apply_1q_batch(amps, n, qubits[0], ((_H, _H), (_H, -_H)))
    if kind in ("RX", "RY"):
        a = _row_param(angle, b, n - 1)
        return apply_1q_batch(amps, n, qubits[0], _rotation_entries(kind, a))
    if kind == "RZ":
        a = _row_param(angle, b, n - 1)
        v = amps.reshape((b,) + (2,) * n).copy()
        i0, i1 = _index(n, {qubits[0]: 0}), _index(n, {qubits[0]: 1})
        v[i0] *= np.exp(-0.5j * a)
        v[i1] *= np.exp(0.5j * a)
        return v.reshape(b, -1)
    c, t = qubits
    v = amps.reshape((b,) + (2,) * n)
    if kind == "CNOT":
        out = v.copy()
        out[_index(n, {c: 1, t: 0})] = v[_index(n, {c: 1, t: 1})]
        out[_index(n, {c: 1, t: 1})] = v[_index(n, {c: 1, t: 0})]
        return out.reshape(b, -1)
    if kind == "SWAP":
        return np.ascontiguousarray(np.swapaxes(v, c + 1, t + 1)).reshape(b, -1)
    if kind == "CRZ":
        a = _row_param(angle, b, n - 2)
        out = v.copy()
        out[_index(n, {c: 1, t: 0})] *= np.exp(-0.5j * a)
        out[_index(n, {c: 1, t: 1})] *= np.exp(0.5j * a)
        return out.reshape(b, -1)
    raise GateError(f"unknown gate kind {kind!r}")


def expect_z_batch(amps: np.ndarray, n: int) -> np.ndarray:
    """<Z_q> for every row and qubit, shape (B, n)."""
    probs = (amps.real**2 + amps.imag**2).reshape((amps.shape[0],) + (2,) * n)
    out = np.empty((amps.shape[0], n))
    for q in range(n):
        axes = tuple(a for a in range(1, n + 1) if a != q + 1)
        marg = probs.sum(axis=axes)
        out[:, q] = marg[:, 0] - marg[:, 1]
    return out


def z_signs(n: int) -> np.ndarray:
    """(2**n, n) matrix of Z eigenvalues: +1 where qubit q is 0, -1 where 1."""
    idx = np.arange(2**n)[:, None]
    bits = (idx >> (n - 1 - np.arange(n))[None, :]) & 1
    return 1.0 - 2.0 * bits


def run_gates_batch(amps: np.ndarray, n: int, program: Sequence[GateOp]) -> np.ndarray:
    for g in program:
        amps = apply_gate_batch(amps, n, g.kind, g.qubits, g.angle)
    return amps


def program_unitary(n: int, program: Sequence[GateOp]) -> np.ndarray:
    """Dense unitary of ``program``, built by evolving every basis state."""
    cols = run_gates_batch(np.eye(2**n, dtype=np.complex128), n, program)
    return cols.T


# single-state API ----------------------------------------------------------------

def _validate(g: GateOp, n: int) -> None:
    for q in g.qubits:
        if not 0 <= q < n:
            raise IndexError(f"{g.kind}: qubit {q} out of range for {n}-qubit register")


def apply_gate(s: StateVector, g: GateOp) -> StateVector:
    _validate(g, s.n_qubits)
    amps = apply_gate_batch(s.amps[None, :], s.n_qubits, g.kind, g.qubits, g.angle)
    return StateVector(s.n_qubits, amps[0])


def expect_z(s: StateVector, qubit: int) -> float:
    if not 0 <= qubit < s.n_qubits:
        raise IndexError(f"qubit {qubit} out of range for {s.n_qubits}-qubit register")
    return float(expect_z_batch(s.amps[None, :], s.n_qubits)[0, qubit])


def run_program(n_qubits: int, program: Sequence[GateOp]) -> StateVector:
    s = init_zero(n_qubits)
    for pos, g in enumerate(program):
        try:
            s = apply_gate(s, g)
        except (GateError, IndexError) as exc:
            raise type(exc)(f"gate {pos} ({g.kind} on {g.qubits}): {exc}") from exc
    return s


# parameter shift -------------------------------------------------------------------

# two-term rule for RX/RY/RZ (generator eigenvalues +-1/2)
_SHIFT_TWO = ((math.pi / 2, 0.5), (-math.pi / 2, -0.5))
# four-term rule for CRZ (generator eigenvalues {0, 0, +-1/2})
_C_PLUS = (math.sqrt(2) + 1) / (4 * math.sqrt(2))
_C_MINUS = (math.sqrt(2) - 1) / (4 * math.sqrt(2))
_SHIFT_FOUR = (
    (math.pi / 2, _C_PLUS),
    (-math.pi / 2, -_C_PLUS),
    (3 * math.pi / 2, -_C_MINUS),
    (-3 * math.pi / 2, _C_MINUS),
)


def shift_rule(kind: str) -> tuple[tuple[float, float], ...]:
    """(shift, coefficient) pairs with d<O>/dtheta = sum c * <O>(theta + s)."""
    if kind in ROTATIONS:
        return _SHIFT_TWO
    if kind == "CRZ":
        return _SHIFT_FOUR
    raise GateError(f"{kind} has no parameter-shift rule")


def param_shift_grad(
    program_builder: Callable[[Sequence[float]], Sequence[GateOp]],
    angles: Sequence[float],
    observable: Sequence[int],
    n_qubits: int | None = None,
) -> np.ndarray:
    """Jacobian d<Z_q>/d angle_k, shape (len(observable), len(angles)).

    Gates produced by ``program_builder`` must tag each use of a logical angle
    with ``param=k``; every tagged occurrence is shifted separately, so one
    angle may feed several rotations.
    """
    angles = [float(a) for a in angles]
    program = list(program_builder(angles))
    if n_qubits is None:
        n_qubits = 1 + max((q for g in program for q in g.qubits), default=0)
    obs = list(observable)
    for q in obs:
        if not 0 <= q < n_qubits:
            raise IndexError(f"observable qubit {q} out of range")
    shifted: list[list[GateOp]] = []
    slots: list[tuple[int, float]] = []
    for pos, g in enumerate(program):
        if g.param is None:
            continue
        if not 0 <= g.param < len(angles):
            raise GateError(f"gate {pos} tags unknown angle {g.param}")
        for shift, coeff in shift_rule(g.kind):
            variant = list(program)
            variant[pos] = g.with_angle(g.angle + shift)
            shifted.append(variant)
            slots.append((g.param, coeff))
    grad = np.zeros((len(obs), len(angles)))
    if not shifted:
        return grad
    for (k, coeff), variant in zip(slots, shifted):
        state = run_gates_batch(zero_batch(1, n_qubits), n_qubits, variant)
        grad[:, k] += coeff * expect_z_batch(state, n_qubits)[0, obs]
    return grad
