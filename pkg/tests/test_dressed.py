from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dense import expect_z_dense, gate_matrix, run_dense
from lorentz_eqgnn import autodiff as ad
from lorentz_eqgnn.dressed import (
    DressedCircuit,
    embedding_gates,
    forward_reference,
    full_entangle,
    full_entangle_gates,
    preprocess,
    preprocess_grad,
    shifted_entangle,
    shifted_entangle_gates,
    variational_gates,
)
from lorentz_eqgnn.qsim import GateOp, StateVector, init_zero, run_program
from conftest import central_diff


def circuit_with(weights):
    w = np.asarray(weights, dtype=np.float64)
    c = DressedCircuit(w.shape[1], w.shape[0], 0.0)
    c.weights.data = w.copy()
    return c


def basis(n, index):
    amps = np.zeros(2**n, dtype=complex)
    amps[index] = 1.0
    return StateVector(n, amps)


def test_preprocess():
    assert preprocess([0.0])[0] == 0.0
    assert abs(preprocess([1e6])[0] - math.pi / 2) < 1e-9
    x = np.array([-1.3, 0.2, 2.5])
    fd = central_diff(lambda v: preprocess(v).sum(), x)
    assert np.max(np.abs(preprocess_grad(x, np.ones(3)) - fd)) < 1e-8


def test_full_entangle_order():
    assert full_entangle_gates(2) == [GateOp("CNOT", (0, 1))]
    assert [g.qubits for g in full_entangle_gates(4)] == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    assert np.array_equal(full_entangle(init_zero(4)).amps, init_zero(4).amps)


def test_shifted_entangle_wiring():
    kinds = [(g.kind, g.qubits) for g in shifted_entangle_gates(4)]
    assert kinds == [("CRZ", (0, 1)), ("CRZ", (1, 2)), ("CRZ", (2, 3)), ("SWAP", (0, 1)), ("SWAP", (2, 3))]
    assert np.array_equal(shifted_entangle(init_zero(2)).amps, init_zero(2).amps)


def test_shifted_entangle_on_basis_state():
    # |1010>: SWAP(0,1) and SWAP(2,3) give |0101>; CRZ adds only a global phase
    out = shifted_entangle(basis(4, 0b1010)).amps
    assert np.flatnonzero(np.abs(out) > 1e-12).tolist() == [0b0101]
    assert abs(abs(out[0b0101]) - 1.0) < 1e-12


def test_entanglers_reject_single_qubit():
    with pytest.raises(ValueError):
        full_entangle(init_zero(1))
    with pytest.raises(ValueError):
        shifted_entangle(init_zero(1))


def test_constructor_validation():
    with pytest.raises(ValueError):
        DressedCircuit(4, 0)
    with pytest.raises(ValueError):
        DressedCircuit(4, 9)
    c = DressedCircuit(4, 3, rng=0)
    assert c.weights.shape == (3, 4) and c.n_params == 12


def test_program_layout():
    c = DressedCircuit(4, 2, rng=0)
    prog = c.program([0.1, 0.2, 0.3, 0.4])
    assert [g.kind for g in prog[:8]] == ["H"] * 4 + ["RZ"] * 4
    odd = [g for g in prog[8:] if g.param is not None and g.param < 4]
    assert [g.kind for g in odd] == ["RX", "RY"] * 4  # shared angle, RX first
    even = [g for g in prog[8:] if g.param is not None and g.param >= 4]
    assert [g.kind for g in even] == ["RY"] * 4


def test_zero_weights_zero_angles_give_zero():
    out = DressedCircuit(4, 2, 0.0).forward(np.zeros((1, 4)))
    assert np.max(np.abs(out)) < 1e-10


def test_golden_pi_weights_depth1():
    # dense Kronecker oracle: RY(pi) RX(pi) maps |+> to -|->, so every <Z> vanishes
    out = circuit_with(np.full((1, 4), math.pi)).forward(np.zeros((1, 4)))
    assert np.max(np.abs(out)) < 1e-12


GOLDEN_W = np.array([[0.4, -1.3, 2.2, 0.9], [1.7, -0.5, 0.25, -2.6]])
GOLDEN_A = np.array([0.3, -0.7, 1.1, 0.2])
# frozen from the dense Kronecker-product oracle in tests/dense.py
GOLDEN_OUT = [0.3293396927484622, 0.1002647141090463, -0.7857596311111645, 0.07766888095795274]


def test_golden_depth2():
    out = circuit_with(GOLDEN_W).forward(GOLDEN_A[None, :])[0]
    assert np.max(np.abs(out - GOLDEN_OUT)) < 1e-12
    gates = embedding_gates(GOLDEN_A) + variational_gates(GOLDEN_W)
    assert np.max(np.abs(expect_z_dense(run_dense(4, gates), 4) - GOLDEN_OUT)) < 1e-12


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_batched_forward_matches_gate_by_gate(depth, rng):
    c = DressedCircuit(4, depth, 1.0, rng)
    angles = rng.uniform(-math.pi / 2, math.pi / 2, (6, 4))
    assert np.max(np.abs(c.forward(angles) - forward_reference(c, angles))) < 1e-12


def test_forward_bounded_and_batch_order_independent(rng):
    c = DressedCircuit(4, 3, 2.0, rng)
    angles = rng.uniform(-math.pi / 2, math.pi / 2, (100, 4))
    out = c.forward(angles)
    assert np.all(np.abs(out) <= 1.0 + 1e-12)
    perm = rng.permutation(100)
    assert np.array_equal(c.forward(angles[perm]), out[perm])


def test_width_mismatch():
    with pytest.raises(ad.DimensionError):
        DressedCircuit(4, 1).forward(np.zeros((2, 3)))


def test_weight_periodicity(rng):
    c = DressedCircuit(4, 2, 1.0, rng)
    angles = rng.uniform(-1, 1, (3, 4))
    base = c.forward(angles)
    for idx in [(0, 1), (1, 3)]:
        c2 = circuit_with(c.weights.data)
        c2.weights.data[idx] += 2 * math.pi
        assert np.max(np.abs(c2.forward(angles) - base)) < 1e-10


def test_zero_upstream_zero_gradients(rng):
    c = DressedCircuit(4, 2, 1.0, rng)
    gw, ga = c.backward(rng.uniform(-1, 1, (3, 4)), np.zeros((3, 4)))
    assert not gw.any() and not ga.any()


def test_single_qubit_pathway_analytic():
    # depth 1, all other weights zero: <Z_q> responds to w_q as a cos-type curve
    w = np.zeros((1, 4))
    w[0, 2] = 0.6
    c = circuit_with(w)
    up = np.zeros((1, 4))
    up[0, 2] = 1.0
    gw, _ = c.backward(np.zeros((1, 4)), up)

    def f(t):
        c.weights.data[0, 2] = t
        return c.forward(np.zeros((1, 4)))[0, 2]

    fd = (f(0.6 + 1e-5) - f(0.6 - 1e-5)) / 2e-5
    assert abs(gw[0, 2] - fd) < 1e-6


@pytest.mark.parametrize("depth", [1, 2, 3])
def test_backward_matches_finite_differences(depth, rng):
    c = DressedCircuit(4, depth, 1.0, rng)
    angles = rng.uniform(-math.pi / 2, math.pi / 2, (3, 4))
    up = rng.normal(size=(3, 4))
    gw, ga = c.backward(angles, up)
    w0 = c.weights.data.copy()

    def fw(w):
        c.weights.data = w
        return float(np.sum(c.forward(angles) * up))

    assert np.max(np.abs(central_diff(fw, w0) - gw)) < 1e-6
    c.weights.data = w0
    assert np.max(np.abs(central_diff(lambda a: float(np.sum(c.forward(a) * up)), angles) - ga)) < 1e-6


def test_shared_weight_equals_sum_of_tied_angles(rng):
    """d/dw of the shared RX/RY angle equals the sum over untied occurrences."""
    w = rng.uniform(-2, 2, (1, 4))
    a = rng.uniform(-1, 1, 4)

    def untied(rx_angle, ry_angle, q=1):
        gates = embedding_gates(a)
        for g in variational_gates(w):
            if g.param == q:
                g = g.with_angle(rx_angle if g.kind == "RX" else ry_angle)
            gates.append(g)
        return run_program(4, gates)

    h = 1e-5
    z = lambda s: np.array([float(np.sum(np.abs(s.amps) ** 2 * (1 - 2 * ((np.arange(16) >> 2) & 1))))])  # <Z_1>
    d_rx = (z(untied(w[0, 1] + h, w[0, 1])) - z(untied(w[0, 1] - h, w[0, 1]))) / (2 * h)
    d_ry = (z(untied(w[0, 1], w[0, 1] + h)) - z(untied(w[0, 1], w[0, 1] - h))) / (2 * h)
    up = np.zeros((1, 4))
    up[0, 1] = 1.0
    gw, _ = circuit_with(w).backward(a[None, :], up)
    assert abs(gw[0, 1] - (d_rx + d_ry)[0]) < 1e-6


def test_taped_layer_gradients(rng):
    c = DressedCircuit(4, 2, 0.5, rng)
    feats = rng.normal(size=(5, 4))
    up = rng.normal(size=(5, 4))
    x = ad.Tensor(feats, requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(ad.mul(c.layer(x), up))
    tape.backward(loss)
    fd = central_diff(lambda f: float(np.sum(c.forward(preprocess(f)) * up)), feats)
    assert np.max(np.abs(fd - x.grad)) < 1e-6
    assert c.weights.grad.shape == (2, 4)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_outputs_in_unit_interval(depth, seed):
    rng = np.random.default_rng(seed)
    c = DressedCircuit(4, depth, 3.0, rng)
    out = c.forward(rng.uniform(-math.pi / 2, math.pi / 2, (4, 4)))
    assert np.all(np.abs(out) <= 1.0 + 1e-12)


def test_dense_oracle_consistency():
    # the oracle's SWAP and CNOT agree with their defining basis permutations
    assert np.array_equal(np.abs(gate_matrix(2, "SWAP", (0, 1))).real, np.eye(4)[[0, 2, 1, 3]])
    assert np.array_equal(np.abs(gate_matrix(2, "CNOT", (0, 1))).real, np.eye(4)[[0, 1, 3, 2]])
