"""Dressed quantum circuit: tanh angle scaling around a small variational circuit.

Gate program for one sample, with weights w of shape (q_depth, n_qubits):

    H on every qubit
    RZ(angle_i) on qubit i
    for k = 1 .. q_depth:
        k odd:  CNOT on all ordered pairs (i < j), then RX(w[k,i]) and RY(w[k,i])
        k even: CRZ(pi/2) chain + SWAPs on even pairs, then RY(w[k,i])
    read out <Z_i> for every qubit

A batch is evaluated by compiling the input-independent part (everything
after the embedding) into one 2**n x 2**n unitary and applying it to the
embedded states. Gradients use the parameter-shift rule on every rotation
occurrence, so the shared RX/RY angle of odd layers picks up both terms.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .qsim import (
    GateOp,
    StateVector,
    apply_gate,
    program_unitary,
    shift_rule,
    z_signs,
)

HALF_PI = math.pi / 2


def preprocess(features) -> np.ndarray:
    """tanh(features) * pi/2, mapping any real input into [-pi/2, pi/2]."""
    return np.tanh(np.asarray(features, dtype=np.float64)) * HALF_PI


def preprocess_grad(features, grad_angles) -> np.ndarray:
    """Chain rule through :func:`preprocess`."""
    t = np.tanh(np.asarray(features, dtype=np.float64))
    return np.asarray(grad_angles) * HALF_PI * (1.0 - t * t)


def full_entangle_gates(n: int) -> list[GateOp]:
    return [GateOp("CNOT", (i, j)) for i in range(n) for j in range(i + 1, n)]


def shifted_entangle_gates(n: int) -> list[GateOp]:
    gates = [GateOp("CRZ", (i, i + 1), HALF_PI) for i in range(n - 1)]
    gates += [GateOp("SWAP", (i, i + 1)) for i in range(0, n - 1, 2)]
    return gates


def _apply_all(s: StateVector, gates: Sequence[GateOp]) -> StateVector:
    for g in gates:
        s = apply_gate(s, g)
    return s


def full_entangle(s: StateVector) -> StateVector:
    if s.n_qubits < 2:
        raise ValueError("entangling layers need at least two qubits")
    return _apply_all(s, full_entangle_gates(s.n_qubits))


def shifted_entangle(s: StateVector) -> StateVector:
    if s.n_qubits < 2:
        raise ValueError("entangling layers need at least two qubits")
    return _apply_all(s, shifted_entangle_gates(s.n_qubits))


def embedding_gates(angles: Sequence[float]) -> list[GateOp]:
    n = len(angles)
    return [GateOp("H", (i,)) for i in range(n)] + [GateOp("RZ", (i,), float(a)) for i, a in enumerate(angles)]


def variational_gates(weights: np.ndarray) -> list[GateOp]:
    """Trainable part of the circuit; ``param`` indexes the flattened weights."""
    depth, n = weights.shape
    gates: list[GateOp] = []
    for k in range(1, depth + 1):
        row = weights[k - 1]
        base = (k - 1) * n
        if k % 2 == 1:
            gates += full_entangle_gates(n)
            for i in range(n):
                # RY(w) . RX(w): RX acts first
                gates.append(GateOp("RX", (i,), float(row[i]), base + i))
                gates.append(GateOp("RY", (i,), float(row[i]), base + i))
        else:
            gates += shifted_entangle_gates(n)
            gates += [GateOp("RY", (i,), float(row[i]), base + i) for i in range(n)]
    return gates


class DressedCircuit:
    def __init__(self, n_qubits: int = 4, q_depth: int = 2, q_delta: float = 0.01, rng=None, name: str = "circuit"):
        if n_qubits < 2:
            raise ValueError("dressed circuit needs at least two qubits")
        if not 1 <= q_depth <= 8:
            raise ValueError(f"q_depth must be in [1, 8], got {q_depth}")
        self.n_qubits = n_qubits
        self.q_depth = q_depth
        self.q_delta = q_delta
        rng = np.random.default_rng(rng)
        self.weights = ad.Tensor(q_delta * rng.standard_normal((q_depth, n_qubits)), requires_grad=True, name=name)
        self._zsigns = z_signs(n_qubits)
        # bit b_k of each basis index minus 1/2, i.e. -Z/2
        self._half_bits = -0.5 * self._zsigns
        self._embed_norm = 2.0 ** (-n_qubits / 2)

    @property
    def n_params(self) -> int:
        return self.q_depth * self.n_qubits

    def program(self, angles: Sequence[float]) -> list[GateOp]:
        """Full gate list for one sample (embedding + variational part)."""
        return embedding_gates(angles) + variational_gates(self.weights.data)

    def _check_angles(self, angles) -> np.ndarray:
        a = np.asarray(angles, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != self.n_qubits:
            raise ad.DimensionError(f"expected angles of shape (B, {self.n_qubits}), got {a.shape}")
        return a

    def _embed(self, angles: np.ndarray) -> np.ndarray:
        """H then RZ(a_i) on |0...0>: the product state exp(i sum_k a_k (b_k - 1/2)) / 2**(n/2)."""
        phase = angles @ self._half_bits.T
        return np.exp(1j * phase) * self._embed_norm

    def _expect(self, embedded: np.ndarray, unitary: np.ndarray) -> np.ndarray:
        out = embedded @ unitary.T
        return (out.real**2 + out.imag**2) @ self._zsigns

    def forward(self, angles) -> np.ndarray:
        """<Z_i> per sample, shape (B, n_qubits); every entry lies in [-1, 1]."""
        a = self._check_angles(angles)
        u = program_unitary(self.n_qubits, variational_gates(self.weights.data))
        return self._expect(self._embed(a), u)

    def backward(self, angles, upstream) -> tuple[np.ndarray, np.ndarray]:
        """Vector-Jacobian products for the weights and the input angles.

        Returns ``(grad_weights, grad_angles)`` with shapes (q_depth, n_qubits)
        and (B, n_qubits).
        """
        a = self._check_angles(angles)
        up = np.asarray(upstream, dtype=np.float64)
        if up.shape != a.shape:
            raise ad.DimensionError(f"upstream shape {up.shape} does not match angles {a.shape}")
        n = self.n_qubits
        embedded = self._embed(a)
        # collapse the Z readout against upstream once: sum_q up[b,q] * Z_q(j)
        weights_by_basis = up @ self._zsigns.T
        gates = variational_gates(self.weights.data)
        grad_w = np.zeros(self.n_params)
        for pos, g in enumerate(gates):
            if g.param is None:
                continue
            for shift, coeff in shift_rule(g.kind):
                variant = list(gates)
                variant[pos] = g.with_angle(g.angle + shift)
                out = embedded @ program_unitary(n, variant).T
                grad_w[g.param] += coeff * np.sum((out.real**2 + out.imag**2) * weights_by_basis)
        u = program_unitary(n, gates)
        grad_a = np.zeros_like(a)
        for i in range(n):
            for shift, coeff in shift_rule("RZ"):
                out = (embedded * np.exp(1j * shift * self._half_bits[:, i])) @ u.T
                grad_a[:, i] += coeff * np.sum((out.real**2 + out.imag**2) * weights_by_basis, axis=1)
        return grad_w.reshape(self.q_depth, n), grad_a

    def __call__(self, angles: ad.Tensor) -> ad.Tensor:
        """Taped circuit evaluation on already-scaled angles."""
        angles = ad.tensor(angles)
        a = self._check_angles(angles.data)
        out = self.forward(a)

        def vjp(g):
            gw, ga = self.backward(a, g)
            return ga, gw

        return ad.record(out, (angles, self.weights), vjp)

    def layer(self, features: ad.Tensor) -> ad.Tensor:
        """Preprocess then evaluate: the complete dressed layer on raw features."""
        angles = ad.mul(ad.activate(features, "tanh"), HALF_PI)
        return self(angles)


def forward_reference(circuit: DressedCircuit, angles) -> np.ndarray:
    """Per-sample gate-by-gate simulation; slow, used to cross-check ``forward``."""
    from .qsim import expect_z, run_program

    a = np.asarray(angles, dtype=np.float64)
    out = np.empty_like(a)
    for b, row in enumerate(a):
        s = run_program(circuit.n_qubits, circuit.program(row))
        out[b] = [expect_z(s, q) for q in range(circuit.n_qubits)]
    return out
