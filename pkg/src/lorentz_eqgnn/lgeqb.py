"""Lorentz group equivariant quantum block (one message-passing layer).

Graphs are handled as edge lists: ``Edges.src[e] = i`` and ``Edges.dst[e] = j``
for the directed edge i <- j, so per-node sums over j are segment sums over
``src``. Several graphs can share one edge list as long as node indices are
global (see :mod:`lorentz_eqgnn.model`).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .dressed import DressedCircuit
from .minkowski import mink_inner, mink_norm2_diff, psi_n

log = logging.getLogger(__name__)

COORD_CLAMP = 1e3
DEGENERATE_TOL = 1e-12


class DegenerateKinematicsError(ValueError):
    pass


@dataclass(frozen=True)
class Edges:
    src: np.ndarray
    dst: np.ndarray
    n_nodes: int

    @classmethod
    def complete(cls, n_nodes: int, self_edges: bool = False) -> Edges:
        """All ordered pairs (i, j), i-major; i == j only if ``self_edges``."""
        i, j = np.meshgrid(np.arange(n_nodes), np.arange(n_nodes), indexing="ij")
        keep = np.ones_like(i, dtype=bool) if self_edges else i != j
        return cls(i[keep], j[keep], n_nodes)

    @property
    def n_edges(self) -> int:
        return len(self.src)


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LgeqbParams:
    """Weights of one block: two reducers, four dressed circuits, two heads."""

    def __init__(
        self,
        n_hidden: int = 4,
        n_qubits: int = 4,
        q_depth: int = 2,
        q_delta: float = 0.01,
        c: float = 1e-3,
        irc_safe: bool = False,
        self_edges: bool = False,
        rng=None,
    ):
        if n_hidden != n_qubits:
            raise ValueError("n_hidden must equal n_qubits: phi_h feeds h residually")
        if c <= 0:
            raise ValueError(f"coordinate scale c must be positive, got {c}")
        rng = np.random.default_rng(rng)
        self.n_hidden, self.n_qubits, self.c = n_hidden, n_qubits, c
        self.irc_safe, self.self_edges = irc_safe, self_edges
        n_edge_in = 2 * n_hidden + 2
        n_node_in = 2 * n_hidden

        def p(name, value):
            return ad.Tensor(value, requires_grad=True, name=name)

        self.reducer_e_w = p("reducer_e.w", _uniform(rng, n_edge_in, (n_edge_in, n_qubits)))
        self.reducer_e_b = p("reducer_e.b", _uniform(rng, n_edge_in, (n_qubits,)))
        self.reducer_h_w = p("reducer_h.w", _uniform(rng, n_node_in, (n_node_in, n_qubits)))
        self.reducer_h_b = p("reducer_h.b", _uniform(rng, n_node_in, (n_qubits,)))
        self.phi_e = DressedCircuit(n_qubits, q_depth, q_delta, rng, name="phi_e.weights")
        self.phi_h = DressedCircuit(n_qubits, q_depth, q_delta, rng, name="phi_h.weights")
        self.phi_m = DressedCircuit(n_qubits, q_depth, q_delta, rng, name="phi_m.weights")
        self.phi_m_w = p("phi_m.w", _uniform(rng, n_qubits, (n_qubits, 1)))
        self.phi_m_b = p("phi_m.b", _uniform(rng, n_qubits, (1,)))
        self.phi_x = DressedCircuit(n_qubits, q_depth, q_delta, rng, name="phi_x.weights")
        self.phi_x_w = p("phi_x.w", _uniform(rng, n_qubits, (n_qubits, 1)))

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        return [
            ("reducer_e.w", self.reducer_e_w),
            ("reducer_e.b", self.reducer_e_b),
            ("reducer_h.w", self.reducer_h_w),
            ("reducer_h.b", self.reducer_h_b),
            ("phi_e.weights", self.phi_e.weights),
            ("phi_h.weights", self.phi_h.weights),
            ("phi_m.weights", self.phi_m.weights),
            ("phi_m.w", self.phi_m_w),
            ("phi_m.b", self.phi_m_b),
            ("phi_x.weights", self.phi_x.weights),
            ("phi_x.w", self.phi_x_w),
        ]


# single-edge helpers (reference semantics) ----------------------------------------

def edge_features(x, h, i: int, j: int, allow_self: bool = False) -> np.ndarray:
    """[h_i, h_j, psi_n(|x_i - x_j|^2), psi_n(<x_i, x_j>)]."""
    if i == j and not allow_self:
        raise ValueError(f"self-edge ({i}, {i}) requested; self-edges are disabled")
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    return np.concatenate([h[i], h[j], [psi_n(mink_norm2_diff(x[i], x[j])), psi_n(mink_inner(x[i], x[j]))]])


# batched, differentiable block pieces ----------------------------------------------

def edge_feature_tensor(x: ad.Tensor, h: ad.Tensor, edges: Edges) -> tuple[ad.Tensor, ad.Tensor]:
    """Edge features for every edge plus the raw Minkowski products (E, 1)."""
    xi = ad.take_rows(x, edges.src)
    xj = ad.take_rows(x, edges.dst)
    diff = ad.sub(xi, xj)
    inner = ad.mink_inner(xi, xj)
    feats = ad.concat(
        [
            ad.take_rows(h, edges.src),
            ad.take_rows(h, edges.dst),
            ad.psi_n(ad.mink_inner(diff, diff)),
            ad.psi_n(inner),
        ],
        axis=1,
    )
    return feats, inner


def compute_message(p: LgeqbParams, feats: ad.Tensor) -> ad.Tensor:
    feats = ad.tensor(feats)
    if feats.shape[-1] != 2 * p.n_hidden + 2:
        raise ad.DimensionError(f"edge features must have width {2 * p.n_hidden + 2}, got {feats.shape}")
    return p.phi_e.layer(ad.affine(feats, p.reducer_e_w, p.reducer_e_b))


def irc_prefactors(inner: ad.Tensor, edges: Edges) -> ad.Tensor:
    """<x_i, x_j> / sum_{k in N(i)} <x_i, x_k>, shape (E, 1)."""
    denom = ad.segment_sum(inner, edges.src, edges.n_nodes)
    tiny = np.abs(denom.data[:, 0]) < DEGENERATE_TOL
    has_edges = np.bincount(edges.src, minlength=edges.n_nodes) > 0
    bad = np.flatnonzero(tiny & has_edges)
    if bad.size:
        raise DegenerateKinematicsError(f"Minkowski attention denominator vanishes at node {int(bad[0])}")
    return ad.div(inner, ad.take_rows(denom, edges.src))


def irc_safe_messages(p: LgeqbParams, x: ad.Tensor, h: ad.Tensor, edges: Edges) -> ad.Tensor:
    feats, inner = edge_feature_tensor(x, h, edges)
    return ad.mul(irc_prefactors(inner, edges), compute_message(p, feats))


def messages(p: LgeqbParams, x: ad.Tensor, h: ad.Tensor, edges: Edges) -> ad.Tensor:
    if p.irc_safe:
        return irc_safe_messages(p, x, h, edges)
    feats, _ = edge_feature_tensor(x, h, edges)
    return compute_message(p, feats)


def coordinate_weight(p: LgeqbParams, m: ad.Tensor) -> ad.Tensor:
    """Scalar phi_x(m_ij), shape (E, 1)."""
    return ad.affine(p.phi_x.layer(m), p.phi_x_w)


def update_coordinates(p: LgeqbParams, x: ad.Tensor, m: ad.Tensor, edges: Edges) -> ad.Tensor:
    """x_i + c * sum_j phi_x(m_ij) x_j, with a guard against runaway updates."""
    x = ad.tensor(x)
    pulled = ad.mul(coordinate_weight(p, m), ad.take_rows(x, edges.dst))
    delta = ad.mul(ad.segment_sum(pulled, edges.src, edges.n_nodes), p.c)
    peak = np.max(np.abs(delta.data), axis=1, keepdims=True)
    if np.any(peak > COORD_CLAMP):
        log.warning("coordinate update exceeds %.0e on %d node(s); clamping", COORD_CLAMP, int(np.sum(peak > COORD_CLAMP)))
        delta = ad.mul(delta, np.minimum(1.0, COORD_CLAMP / np.maximum(peak, 1e-300)))
    return ad.add(x, delta)


def edge_weight(p: LgeqbParams, m: ad.Tensor) -> ad.Tensor:
    """Edge significance sigmoid(head(phi_m(m_ij))) in (0, 1), shape (E, 1)."""
    return ad.activate(ad.affine(p.phi_m.layer(m), p.phi_m_w, p.phi_m_b), "sigmoid")


def update_scalars(p: LgeqbParams, h: ad.Tensor, m: ad.Tensor, w: ad.Tensor, edges: Edges) -> ad.Tensor:
    """h_i + phi_h(reducer([h_i, sum_j w_ij m_ij]))."""
    h = ad.tensor(h)
    agg = ad.segment_sum(ad.mul(w, m), edges.src, edges.n_nodes)
    reduced = ad.affine(ad.concat([h, agg], axis=1), p.reducer_h_w, p.reducer_h_b)
    return ad.add(h, p.phi_h.layer(reduced))


def block_forward(p: LgeqbParams, x: ad.Tensor, h: ad.Tensor, edges: Edges) -> tuple[ad.Tensor, ad.Tensor]:
    m = messages(p, x, h, edges)
    x_new = update_coordinates(p, x, m, edges)
    h_new = update_scalars(p, h, m, edge_weight(p, m), edges)
    return x_new, h_new


# diagnostics -------------------------------------------------------------------------

def collinear_residual(p: LgeqbParams, x, h, i: int, j: int, fraction: float = 0.5, angle: float = 1e-4) -> float:
    """Relative additivity defect |m(i,j1) + m(i,j2) - m(i,j)| / |m(i,j)|.

    Particle ``j`` is split into two massless-direction daughters carrying
    ``fraction`` and ``1 - fraction`` of its momentum, opened by ``angle``
    radians about an axis perpendicular to its 3-momentum. Reported, not
    asserted: collinear safety is not guaranteed through the circuit.
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    pj = x[j]
    p3 = pj[1:]
    axis = np.cross(p3, [0.0, 0.0, 1.0] if abs(p3[2]) < 0.9 * np.linalg.norm(p3) else [1.0, 0.0, 0.0])
    axis /= np.linalg.norm(axis)

    def rotated(v, theta):
        return v * np.cos(theta) + np.cross(axis, v) * np.sin(theta) + axis * np.dot(axis, v) * (1 - np.cos(theta))

    d1 = np.concatenate([[fraction * pj[0]], rotated(fraction * p3, angle / 2)])
    d2 = np.concatenate([[(1 - fraction) * pj[0]], rotated((1 - fraction) * p3, -angle / 2)])
    keep = [k for k in range(len(x)) if k != j]
    x_split = np.vstack([x[keep], d1, d2])
    h_split = np.vstack([h[keep], h[j], h[j]])
    n = len(x)
    i_split = keep.index(i)

    def message_from(xs, hs, src, dsts):
        edges = Edges.complete(len(xs), p.self_edges)
        m = messages(p, ad.Tensor(xs), ad.Tensor(hs), edges).data
        pick = [np.flatnonzero((edges.src == src) & (edges.dst == d))[0] for d in dsts]
        return m[pick]

    whole = message_from(x, h, i, [j])[0]
    parts = message_from(x_split, h_split, i_split, [n - 1, n]).sum(axis=0)
    return float(np.linalg.norm(parts - whole) / max(np.linalg.norm(whole), 1e-300))
