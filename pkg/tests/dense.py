"""Dense Kronecker-product reference for gate matrices (test oracle)."""
from __future__ import annotations

import math
from functools import reduce

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)


def rx(t):
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def ry(t):
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(t):
    return np.diag([np.exp(-0.5j * t), np.exp(0.5j * t)])


def embed(n: int, ops: dict[int, np.ndarray]) -> np.ndarray:
    """Tensor product with ``ops[q]`` on qubit q (qubit 0 leftmost) and identity elsewhere."""
    return reduce(np.kron, [ops.get(q, I2) for q in range(n)])


def gate_matrix(n: int, kind: str, qubits, angle=None) -> np.ndarray:
    if kind in ("H", "RX", "RY", "RZ"):
        m = {"H": lambda _: H, "RX": rx, "RY": ry, "RZ": rz}[kind](angle)
        return embed(n, {qubits[0]: m})
    c, t = qubits
    if kind == "CNOT":
        return embed(n, {c: P0}) + embed(n, {c: P1, t: X})
    if kind == "CRZ":
        return embed(n, {c: P0}) + embed(n, {c: P1, t: rz(angle)})
    if kind == "SWAP":
        return 0.5 * (embed(n, {}) + embed(n, {c: X, t: X}) + embed(n, {c: Y, t: Y}) + embed(n, {c: Z, t: Z}))
    raise ValueError(kind)


def run_dense(n: int, gates) -> np.ndarray:
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    for g in gates:
        psi = gate_matrix(n, g.kind, g.qubits, g.angle) @ psi
    return psi


def expect_z_dense(psi: np.ndarray, n: int) -> np.ndarray:
    return np.array([np.vdot(psi, embed(n, {q: Z}) @ psi).real for q in range(n)])
