from __future__ import annotations

import logging

import numpy as np
import pytest

from lorentz_eqgnn import autodiff as ad
from lorentz_eqgnn.lgeqb import (
    DegenerateKinematicsError,
    Edges,
    LgeqbParams,
    block_forward,
    collinear_residual,
    compute_message,
    edge_feature_tensor,
    edge_features,
    edge_weight,
    irc_prefactors,
    messages,
    update_coordinates,
    update_scalars,
)
from lorentz_eqgnn.minkowski import apply_lorentz, invariant_mass2, psi_n, random_lorentz
from lorentz_eqgnn.verify import random_jet, rel_dev


@pytest.fixture
def params():
    # larger circuit weights than the default so every path carries signal
    return LgeqbParams(q_delta=0.5, rng=11)


@pytest.fixture
def state(rng):
    jet = random_jet(rng, 12)
    return jet.momenta, rng.normal(size=(12, 4))


def test_edges_complete():
    e = Edges.complete(3)
    assert list(zip(e.src, e.dst)) == [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    assert Edges.complete(3, self_edges=True).n_edges == 9


def test_params_validation():
    with pytest.raises(ValueError):
        LgeqbParams(n_hidden=5, n_qubits=4)
    with pytest.raises(ValueError):
        LgeqbParams(c=0.0)


def test_edge_features_examples(rng):
    x = np.array([[5.0, 1.0, 2.0, 3.0], [5.0, 1.0, 2.0, 3.0]])
    f = edge_features(x, np.zeros((2, 4)), 0, 1)
    assert np.array_equal(f, [0] * 8 + [0.0, psi_n(invariant_mass2(x[0]))])
    h = rng.normal(size=(2, 4))
    f = edge_features(x, h, 1, 0)
    assert np.array_equal(f[:4], h[1]) and np.array_equal(f[4:8], h[0])
    with pytest.raises(ValueError):
        edge_features(x, h, 1, 1)


def test_edge_features_boost_invariant(state):
    x, h = state
    t = random_lorentz(5)
    for i, j in [(0, 3), (7, 2)]:
        a = edge_features(x, h, i, j)
        b = edge_features(apply_lorentz(t, x), h, i, j)
        assert np.max(np.abs(a - b)) < 1e-9


def test_batched_features_match_single_edge(state):
    x, h = state
    e = Edges.complete(len(x))
    feats, _ = edge_feature_tensor(ad.Tensor(x), ad.Tensor(h), e)
    for k in (0, 17, 100):
        assert np.allclose(feats.data[k], edge_features(x, h, e.src[k], e.dst[k]), rtol=0, atol=1e-12)


def test_message_bounds_and_width_check(params, state):
    x, h = state
    m = messages(params, ad.Tensor(x), ad.Tensor(h), Edges.complete(len(x))).data
    assert m.shape == (132, 4) and np.all(np.abs(m) <= 1.0)
    with pytest.raises(ad.DimensionError):
        compute_message(params, ad.Tensor(np.zeros((2, 9))))


def test_zero_reducer_gives_constant_message(params, state):
    x, h = state
    params.reducer_e_w.data[:] = 0.0
    params.reducer_e_b.data[:] = 0.0
    m = messages(params, ad.Tensor(x), ad.Tensor(h), Edges.complete(len(x))).data
    expected = params.phi_e.forward(np.zeros((1, 4)))[0]
    assert np.max(np.abs(m - expected)) < 1e-15


@pytest.mark.parametrize("irc", [False, True])
def test_messages_and_scalars_boost_invariant(irc, state):
    p = LgeqbParams(q_delta=0.5, irc_safe=irc, rng=3)
    x, h = state
    e = Edges.complete(len(x))
    m = messages(p, ad.Tensor(x), ad.Tensor(h), e).data
    _, h1 = block_forward(p, ad.Tensor(x), ad.Tensor(h), e)
    for seed in range(20):
        lx = apply_lorentz(random_lorentz(seed), x)
        assert rel_dev(m, messages(p, ad.Tensor(lx), ad.Tensor(h), e).data) < 1e-6
        assert rel_dev(h1.data, block_forward(p, ad.Tensor(lx), ad.Tensor(h), e)[1].data) < 1e-6


def test_coordinate_update_equivariant(params, state):
    x, h = state
    e = Edges.complete(len(x))

    def upd(xx):
        m = messages(params, ad.Tensor(xx), ad.Tensor(h), e)
        return update_coordinates(params, ad.Tensor(xx), m, e).data

    base = upd(x)
    assert rel_dev(x, base) > 0  # the update does move the coordinates
    for seed in range(20):
        t = random_lorentz(seed)
        assert rel_dev(apply_lorentz(t, base), upd(apply_lorentz(t, x))) < 1e-6


def test_coordinate_update_identity_cases(state):
    x, h = state
    e = Edges.complete(len(x))
    p = LgeqbParams(q_delta=0.5, rng=1)
    m = messages(p, ad.Tensor(x), ad.Tensor(h), e)
    p.phi_x_w.data[:] = 0.0
    assert np.array_equal(update_coordinates(p, ad.Tensor(x), m, e).data, x)
    p = LgeqbParams(q_delta=0.5, c=1e-300, rng=1)
    assert np.max(np.abs(update_coordinates(p, ad.Tensor(x), m, e).data - x)) == 0.0


def test_coordinate_clamp_warns(state, caplog):
    x, h = state
    e = Edges.complete(len(x))
    p = LgeqbParams(q_delta=0.5, c=1e6, rng=1)
    m = messages(p, ad.Tensor(x), ad.Tensor(h), e)
    with caplog.at_level(logging.WARNING):
        out = update_coordinates(p, ad.Tensor(x), m, e).data
    assert "clamping" in caplog.text
    assert np.max(np.abs(out - x)) <= 1e3 * (1 + 1e-12)


def test_edge_weight(params, rng):
    m = ad.Tensor(rng.uniform(-1, 1, (100, 4)))
    w = edge_weight(params, m).data
    assert np.all((w > 0) & (w < 1))
    assert np.array_equal(w, edge_weight(params, m).data)
    params.phi_m_w.data[:] = 0.0
    params.phi_m_b.data[:] = 0.0
    assert np.array_equal(edge_weight(params, m).data, np.full((100, 1), 0.5))


def test_update_scalars_zero_circuit_residual(state, rng):
    x, h = state
    p = LgeqbParams(q_delta=0.5, rng=2)
    p.phi_h.weights.data[:] = 0.0
    p.reducer_h_w.data[:] = 0.0
    p.reducer_h_b.data[:] = 0.0
    e = Edges.complete(len(x))
    m = ad.Tensor(rng.uniform(-1, 1, (e.n_edges, 4)))
    w = ad.Tensor(rng.uniform(0, 1, (e.n_edges, 1)))
    out = update_scalars(p, ad.Tensor(h), m, w, e).data
    const = p.phi_h.forward(np.zeros((1, 4)))[0]
    assert np.max(np.abs((out - h) - const)) < 1e-15


@pytest.mark.parametrize("irc", [False, True])
def test_block_permutation_equivariant(irc, state, rng):
    p = LgeqbParams(q_delta=0.5, irc_safe=irc, rng=4)
    x, h = state
    perm = rng.permutation(len(x))
    e = Edges.complete(len(x))
    x1, h1 = block_forward(p, ad.Tensor(x), ad.Tensor(h), e)
    x2, h2 = block_forward(p, ad.Tensor(x[perm]), ad.Tensor(h[perm]), e)
    assert np.max(np.abs(x1.data[perm] - x2.data)) <= 1e-9 * np.abs(x1.data).max()
    assert np.max(np.abs(h1.data[perm] - h2.data)) <= 1e-9


def _prefactors(x):
    e = Edges.complete(len(x))
    t = ad.Tensor(x)
    return e, irc_prefactors(ad.mink_inner(ad.take_rows(t, e.src), ad.take_rows(t, e.dst)), e).data[:, 0]


def test_irc_prefactor_rows_sum_to_one(state):
    x, _ = state
    e, pf = _prefactors(x)
    assert np.max(np.abs(np.bincount(e.src, weights=pf) - 1.0)) < 1e-12
    _, pf2 = _prefactors(x[:2])
    assert np.array_equal(pf2, [1.0, 1.0])


def test_irc_prefactor_boost_invariant(state):
    x, _ = state
    _, pf = _prefactors(x)
    _, pf_boosted = _prefactors(apply_lorentz(random_lorentz(9), x))
    assert rel_dev(pf, pf_boosted) < 1e-6


@pytest.mark.parametrize("z", [1e-2, 1e-4])
def test_irc_soft_scaling(z, rng):
    jet = random_jet(rng, 10)
    x = jet.momenta.copy()

    def pf_at(scale):
        xs = x.copy()
        xs[4] *= scale
        e, pf = _prefactors(xs)
        return pf[np.flatnonzero((e.src == 0) & (e.dst == 4))[0]]

    ratio = pf_at(z) / pf_at(1.0)
    assert 0.5 * z <= ratio <= 2 * z


def test_irc_degenerate_denominator():
    x = np.array([[1.0, 1.0, 0, 0], [1.0, 1.0, 0, 0]])  # collinear massless pair
    with pytest.raises(DegenerateKinematicsError, match="node 0"):
        _prefactors(x)


def test_collinear_residual_is_reported(params, state):
    x, h = state
    r = collinear_residual(params, x, h, 0, 3)
    assert np.isfinite(r) and r >= 0
