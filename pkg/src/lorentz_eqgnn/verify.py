"""Randomised invariant checks shared by the ``verify`` command and the test suite.

Relative deviation between arrays ``a`` (reference) and ``b`` is
``max|a - b| / max(max|a|, 1e-300)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import PION_MASS, JetGraph
from .dressed import DressedCircuit
from .lgeqb import Edges, irc_prefactors, messages, update_coordinates
from .minkowski import apply_lorentz, random_lorentz
from .model import LorentzEqgnn
from .qsim import GateOp, init_zero, program_unitary, run_program

SUITES = ("lorentz", "permutation", "irc", "gradients", "unitarity")


@dataclass
class CheckResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation < self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max deviation {self.deviation:.3e} (tolerance {self.tolerance:.1e})"


def rel_dev(ref, other) -> float:
    ref, other = np.asarray(ref), np.asarray(other)
    return float(np.max(np.abs(ref - other)) / max(float(np.max(np.abs(ref))), 1e-300))


# random inputs -----------------------------------------------------------------------

def random_jet(rng: np.random.Generator, n: int, energy: float = 200.0, spread: float = 0.3, label: int = 0) -> JetGraph:
    """Pion-mass particles with exponential energies scattered about a random axis."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    dirs = axis + spread * rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    e = rng.exponential(energy / n, size=n) + 1.0
    p = np.sqrt(e**2 - PION_MASS**2)
    return JetGraph(np.column_stack([e, dirs * p[:, None]]), label)


def random_jets(seed: int, n_graphs: int, n_min: int = 10, n_max: int = 30) -> list[JetGraph]:
    rng = np.random.default_rng(seed)
    return [random_jet(rng, int(rng.integers(n_min, n_max + 1)), label=k % 2) for k in range(n_graphs)]


def _boosted(graphs, t) -> list[JetGraph]:
    return [JetGraph(apply_lorentz(t, g.momenta), g.label, g.scalars) for g in graphs]


# checks -------------------------------------------------------------------------------

def check_lorentz(model: LorentzEqgnn, seed: int = 0, n_graphs: int = 100, n_transforms: int = 20, tol: float = 1e-6) -> CheckResult:
    """Eval-mode logits under random proper transforms with rapidity <= 2."""
    graphs = random_jets(seed, n_graphs)
    ref = model.logits(graphs, batch_size=n_graphs)
    worst = 0.0
    for k in range(n_transforms):
        t = random_lorentz(seed * 1000 + k, max_rapidity=2.0)
        worst = max(worst, rel_dev(ref, model.logits(_boosted(graphs, t), batch_size=n_graphs)))
    return CheckResult("lorentz invariance of logits", worst, tol)


def check_coordinate_equivariance(model: LorentzEqgnn, seed: int = 0, n_graphs: int = 100, n_transforms: int = 20, tol: float = 1e-6) -> CheckResult:
    """First block: update_coordinates(L x) == L update_coordinates(x)."""
    graphs = random_jets(seed, n_graphs)
    batch = model.batch(graphs)
    block = model.blocks[0]

    def coords(x):
        x0 = ad.Tensor(x)
        h0 = model.embed_inputs(batch)[1]
        return update_coordinates(block, x0, messages(block, x0, h0, batch.edges), batch.edges).data

    base = coords(batch.x)
    worst = 0.0
    for k in range(n_transforms):
        t = random_lorentz(seed * 1000 + k, max_rapidity=2.0)
        worst = max(worst, rel_dev(apply_lorentz(t, base), coords(apply_lorentz(t, batch.x))))
    return CheckResult("coordinate equivariance", worst, tol)


def check_permutation(model: LorentzEqgnn, seed: int = 0, n_graphs: int = 20, n_perms: int = 5, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    graphs = random_jets(seed, n_graphs)
    ref = model.logits(graphs, batch_size=n_graphs)
    worst = 0.0
    for _ in range(n_perms):
        shuffled = []
        for g in graphs:
            order = rng.permutation(g.n_nodes)
            scalars = None if g.scalars is None else g.scalars[order]
            shuffled.append(JetGraph(g.momenta[order], g.label, scalars))
        worst = max(worst, rel_dev(ref, model.logits(shuffled, batch_size=n_graphs)))
    return CheckResult("permutation invariance of logits", worst, tol)


def check_irc(seed: int = 0, n_jets: int = 50, zs=(1e-2, 1e-4)) -> CheckResult:
    """Soft emission: prefactor(z) / prefactor(1) must lie in [z/2, 2z].

    Deviation is ``max |log2(ratio / z)|``; the check passes below 1.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_jets):
        jet = random_jet(rng, int(rng.integers(10, 31)))
        n = jet.n_nodes
        soft = jet.momenta[rng.integers(n)]
        edges = Edges.complete(n + 1)
        pick = np.flatnonzero((edges.src == 0) & (edges.dst == n))[0]

        def prefactor(z):
            x = np.vstack([jet.momenta, z * soft])
            inner = ad.mink_inner(ad.take_rows(ad.Tensor(x), edges.src), ad.take_rows(ad.Tensor(x), edges.dst))
            return irc_prefactors(inner, edges).data[pick, 0]

        full = prefactor(1.0)
        for z in zs:
            worst = max(worst, abs(math.log2(prefactor(z) / full / z)))
    return CheckResult("soft-particle prefactor scaling", worst, 1.0)


def check_circuit_gradients(seed: int = 0, n_circuits: int = 5, batch: int = 4, h: float = 1e-6, tol: float = 1e-6) -> CheckResult:
    """Parameter-shift VJPs against central differences on random 4-qubit circuits."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_circuits):
        circ = DressedCircuit(4, 1 + k % 3, 1.0, rng)
        circ.weights.data = rng.uniform(-math.pi, math.pi, circ.weights.shape)
        angles = rng.uniform(-math.pi, math.pi, (batch, 4))
        up = rng.normal(size=(batch, 4))
        gw, ga = circ.backward(angles, up)
        w0 = circ.weights.data.copy()
        for idx in np.ndindex(w0.shape):
            vals = []
            for s in (h, -h):
                circ.weights.data = w0.copy()
                circ.weights.data[idx] += s
                vals.append(np.sum(circ.forward(angles) * up))
            worst = max(worst, abs((vals[0] - vals[1]) / (2 * h) - gw[idx]))
        circ.weights.data = w0
        for idx in np.ndindex(angles.shape):
            vals = []
            for s in (h, -h):
                a = angles.copy()
                a[idx] += s
                vals.append(np.sum(circ.forward(a) * up))
            worst = max(worst, abs((vals[0] - vals[1]) / (2 * h) - ga[idx]))
    return CheckResult("parameter shift vs finite differences", worst, tol)


def model_loss(model: LorentzEqgnn, graphs) -> ad.Tensor:
    batch = model.batch(graphs)
    loss, _ = ad.softmax_xent(model.forward(batch), batch.labels)
    return loss


def check_model_gradients(model: LorentzEqgnn, seed: int = 0, n_nodes: int = 5, h: float = 1e-5, floor: float = 1e-6, tol: float = 1e-4) -> CheckResult:
    """Taped loss gradient of every parameter against central differences.

    Relative error is ``|g_tape - g_fd| / max(|g_tape|, |g_fd|, floor)``.
    """
    rng = np.random.default_rng(seed)
    graphs = [random_jet(rng, n_nodes, label=1)]
    model.zero_grad()
    with ad.Tape() as tape:
        loss = model_loss(model, graphs)
    tape.backward(loss)
    worst = 0.0
    for _, p in model.named_parameters():
        analytic = p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
        base = p.data.copy()
        for idx in np.ndindex(base.shape):
            vals = []
            for s in (h, -h):
                p.data = base.copy()
                p.data[idx] += s
                vals.append(float(model_loss(model, graphs).data))
            fd = (vals[0] - vals[1]) / (2 * h)
            err = abs(fd - analytic[idx]) / max(abs(fd), abs(analytic[idx]), floor)
            worst = max(worst, err)
        p.data = base
    model.zero_grad()
    return CheckResult("model loss gradient vs finite differences", worst, tol)


def random_program(rng: np.random.Generator, n: int, length: int) -> list[GateOp]:
    kinds = ["H", "RX", "RY", "RZ", "CNOT", "SWAP", "CRZ"]
    prog = []
    for _ in range(length):
        kind = kinds[rng.integers(len(kinds))]
        if kind in ("H", "RX", "RY", "RZ"):
            qubits = (int(rng.integers(n)),)
        else:
            qubits = tuple(int(q) for q in rng.choice(n, 2, replace=False))
        angle = float(rng.uniform(-2 * math.pi, 2 * math.pi)) if kind in ("RX", "RY", "RZ", "CRZ") else None
        prog.append(GateOp(kind, qubits, angle))
    return prog


def check_unitarity(seed: int = 0, n_programs: int = 20, length: int = 50, tol: float = 1e-12) -> CheckResult:
    """Norm drift of random programs and unitarity of their compiled matrices."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_programs):
        n = 2 + k % 4
        prog = random_program(rng, n, length)
        worst = max(worst, abs(run_program(n, prog).norm() - init_zero(n).norm()))
        u = program_unitary(n, prog)
        worst = max(worst, float(np.max(np.abs(u.conj().T @ u - np.eye(2**n)))))
    return CheckResult("norm drift / unitarity", worst, tol)


def run_suite(model: LorentzEqgnn, suite: str, seed: int = 0) -> list[CheckResult]:
    if suite == "all":
        return [r for s in SUITES for r in run_suite(model, s, seed)]
    if suite == "lorentz":
        return [check_lorentz(model, seed, n_graphs=30, n_transforms=10), check_coordinate_equivariance(model, seed, n_graphs=30, n_transforms=10)]
    if suite == "permutation":
        return [check_permutation(model, seed)]
    if suite == "irc":
        return [check_irc(seed)]
    if suite == "gradients":
        return [check_circuit_gradients(seed), check_model_gradients(model, seed)]
    if suite == "unitarity":
        return [check_unitarity(seed)]
    raise ValueError(f"unknown suite {suite!r}; choose from {SUITES + ('all',)}")
