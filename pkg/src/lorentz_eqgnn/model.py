"""End-to-end Lorentz-equivariant quantum GNN for binary jet tagging."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import JetGraph
from .lgeqb import Edges, LgeqbParams, block_forward
from .minkowski import invariant_mass2, psi_n

CHECKPOINT_FORMAT = 1


class DegenerateGraphError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_layers: int = 1
    n_hidden: int = 4
    n_qubits: int = 4
    q_depth: int = 2
    q_delta: float = 0.01
    c: float = 1e-3
    dropout_p: float = 0.2
    irc_safe: bool = False
    n_scalar_in: int = 1
    self_edges: bool = False
    # test fixture only: leaks pooled coordinates into the decoder, breaking invariance
    decode_coordinates: bool = False

    def __post_init__(self):
        if self.n_hidden != self.n_qubits:
            raise ValueError("n_hidden must equal n_qubits")
        if self.n_layers < 1:
            raise ValueError("n_layers must be at least 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        if self.n_scalar_in < 1:
            raise ValueError("n_scalar_in must be at least 1")
        if self.decode_coordinates and self.n_hidden != 4:
            raise ValueError("decode_coordinates needs n_hidden == 4")

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config key(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class GraphBatch:
    """Several graphs flattened into one node set with a shared edge list."""

    x: np.ndarray  # (N_total, 4)
    scalars: np.ndarray  # (N_total, n_scalar_in)
    edges: Edges
    node_graph: np.ndarray  # (N_total,) graph id per node
    labels: np.ndarray  # (G,)

    @property
    def n_graphs(self) -> int:
        return len(self.labels)


def scalar_inputs(graph: JetGraph, n_scalar_in: int) -> np.ndarray:
    """[psi_n(m^2), extra scalars...] zero-padded to ``n_scalar_in`` columns."""
    mass = psi_n(invariant_mass2(graph.momenta))[:, None]
    extra = graph.scalars if graph.scalars is not None else np.zeros((graph.n_nodes, 0))
    width = 1 + extra.shape[1]
    if width > n_scalar_in:
        raise ValueError(f"graph carries {width} scalar inputs but n_scalar_in={n_scalar_in}")
    out = np.zeros((graph.n_nodes, n_scalar_in))
    out[:, :1] = mass
    out[:, 1:width] = extra
    return out


def make_batch(graphs: Sequence[JetGraph], n_scalar_in: int = 1, self_edges: bool = False) -> GraphBatch:
    xs, ss, srcs, dsts, owner = [], [], [], [], []
    offset = 0
    for gid, g in enumerate(graphs):
        if g.n_nodes < 2:
            raise DegenerateGraphError(f"graph {gid} has {g.n_nodes} node(s); need at least 2")
        e = g.edges(self_edges)
        xs.append(g.momenta)
        ss.append(scalar_inputs(g, n_scalar_in))
        srcs.append(e.src + offset)
        dsts.append(e.dst + offset)
        owner.append(np.full(g.n_nodes, gid))
        offset += g.n_nodes
    return GraphBatch(
        np.vstack(xs).astype(np.float64),
        np.vstack(ss),
        Edges(np.concatenate(srcs), np.concatenate(dsts), offset),
        np.concatenate(owner),
        np.array([g.label for g in graphs], dtype=np.int64),
    )


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class LorentzEqgnn:
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)

        def p(name, value):
            return ad.Tensor(value, requires_grad=True, name=name)

        nh = cfg.n_hidden
        self.embed_w = p("embed.w", _uniform(rng, cfg.n_scalar_in, (cfg.n_scalar_in, nh)))
        self.embed_b = p("embed.b", _uniform(rng, cfg.n_scalar_in, (nh,)))
        self.blocks = [
            LgeqbParams(nh, cfg.n_qubits, cfg.q_depth, cfg.q_delta, cfg.c, cfg.irc_safe, cfg.self_edges, rng)
            for _ in range(cfg.n_layers)
        ]
        self.dec1_w = p("decoder.0.w", _uniform(rng, nh, (nh, nh)))
        self.dec1_b = p("decoder.0.b", _uniform(rng, nh, (nh,)))
        self.dec2_w = p("decoder.1.w", _uniform(rng, nh, (nh, 2)))
        self.dec2_b = p("decoder.1.b", _uniform(rng, nh, (2,)))

    # parameters -------------------------------------------------------------------
    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        out = [("embed.w", self.embed_w), ("embed.b", self.embed_b)]
        for k, block in enumerate(self.blocks):
            out += [(f"blocks.{k}.{name}", t) for name, t in block.named_parameters()]
        out += [
            ("decoder.0.w", self.dec1_w),
            ("decoder.0.b", self.dec1_b),
            ("decoder.1.w", self.dec2_w),
            ("decoder.1.b", self.dec2_b),
        ]
        return out

    def parameters(self) -> list[ad.Tensor]:
        return [t for _, t in self.named_parameters()]

    def count_params(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ValueError(f"{name}: expected shape {t.shape}, got {value.shape}")
            t.data = value.copy()

    # forward ----------------------------------------------------------------------
    def embed_inputs(self, batch: GraphBatch) -> tuple[ad.Tensor, ad.Tensor]:
        """x^0 = raw momenta, h^0 = embed(scalars)."""
        x0 = ad.Tensor(batch.x)
        h0 = ad.affine(ad.Tensor(batch.scalars), self.embed_w, self.embed_b)
        return x0, h0

    def encode(self, batch: GraphBatch) -> tuple[ad.Tensor, ad.Tensor]:
        """Run every block; returns (x^L, h^L)."""
        x, h = self.embed_inputs(batch)
        for block in self.blocks:
            x, h = block_forward(block, x, h, batch.edges)
        return x, h

    def forward(self, batch: GraphBatch, training: bool = False, dropout_seed=(0, 0)) -> ad.Tensor:
        """Logits of shape (G, 2). Dropout is only active when ``training``."""
        x, h = self.encode(batch)
        pooled = ad.segment_mean(h, batch.node_graph, batch.n_graphs)
        if self.cfg.decode_coordinates:
            pooled = ad.add(pooled, ad.segment_mean(x, batch.node_graph, batch.n_graphs))
        p = self.cfg.dropout_p
        seed = tuple(int(s) for s in np.atleast_1d(dropout_seed))
        z = ad.dropout(pooled, p, training, seed + (0,))
        z = ad.activate(ad.affine(z, self.dec1_w, self.dec1_b), "relu")
        z = ad.dropout(z, p, training, seed + (1,))
        return ad.affine(z, self.dec2_w, self.dec2_b)

    def logits(self, graphs: Sequence[JetGraph], batch_size: int = 64) -> np.ndarray:
        out = []
        for start in range(0, len(graphs), batch_size):
            batch = make_batch(graphs[start : start + batch_size], self.cfg.n_scalar_in, self.cfg.self_edges)
            out.append(self.forward(batch).data)
        return np.vstack(out) if out else np.zeros((0, 2))

    def predict_proba(self, graphs: Sequence[JetGraph], batch_size: int = 64) -> np.ndarray:
        return ad.softmax(self.logits(graphs, batch_size))

    def batch(self, graphs: Sequence[JetGraph]) -> GraphBatch:
        return make_batch(graphs, self.cfg.n_scalar_in, self.cfg.self_edges)

    # checkpoints ------------------------------------------------------------------
    def to_checkpoint(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT,
            "config": asdict(self.cfg),
            "params": {name: {"shape": list(t.shape), "data": t.data.ravel().tolist()} for name, t in self.named_parameters()},
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def from_checkpoint(cls, doc: dict) -> LorentzEqgnn:
        if doc.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {doc.get('format_version')!r}")
        model = cls(ModelConfig.from_dict(doc["config"]))
        arrays = {}
        for name, rec in doc["params"].items():
            arrays[name] = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        missing = {n for n, _ in model.named_parameters()} - set(arrays)
        if missing:
            raise ValueError(f"checkpoint missing parameter(s): {sorted(missing)}")
        model.load_arrays(arrays)
        return model

    @classmethod
    def load(cls, path) -> LorentzEqgnn:
        with open(path, encoding="utf-8") as fh:
            return cls.from_checkpoint(json.load(fh))


def embed_inputs(jet: JetGraph, model: LorentzEqgnn) -> tuple[np.ndarray, np.ndarray]:
    """(x^0, h^0) for a single jet as plain arrays."""
    if jet.n_nodes < 2:
        raise DegenerateGraphError(f"jet has {jet.n_nodes} particle(s); need at least 2")
    x0, h0 = model.embed_inputs(model.batch([jet]))
    return x0.data, h0.data


def closed_form_param_count(cfg: ModelConfig) -> int:
    """Parameter total from layer shapes alone (see README)."""
    nh, nq, d = cfg.n_hidden, cfg.n_qubits, cfg.q_depth
    embed = cfg.n_scalar_in * nh + nh
    reducers = (2 * nh + 2) * nq + nq + (2 * nh) * nq + nq
    circuits = 4 * d * nq
    heads = (nq + 1) + nq
    decoder = nh * nh + nh + nh * 2 + 2
    return embed + cfg.n_layers * (reducers + circuits + heads) + decoder
