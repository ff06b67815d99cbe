"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` when at
least one input requires a gradient. Outside a tape, everything runs as plain
numpy and nothing is retained, which is what evaluation uses.

    with Tape() as tape:
        loss, _ = softmax_xent(affine(x, w, b), labels)
    tape.backward(loss)
    w.grad  # d loss / d w
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


_local = threading.local()


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        # set when the tensor is the output of a recorded op
        self._tracked = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # arithmetic ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _raise_item(shape):
    raise DimensionError(f"item() needs a single-element tensor, got shape {shape}")


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad, name)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._tracked


class Tape:
    """Ordered record of differentiable operations; single use."""

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._used = False

    def __enter__(self) -> Tape:
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], vjp: Callable) -> None:
        out._tracked = True
        self.nodes.append((out, parents, vjp))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._used:
            raise ContractError("tape already consumed; rebuild it for the next step")
        self._used = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, parents, vjp in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not _needs_grad(parent):
                    continue
                pg = _unbroadcast(pg, parent.shape)
                if parent._tracked:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg
                else:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
        # a leaf loss (no recorded op) still gets its trivial gradient
        if not loss._tracked and loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def record(out_data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap ``out_data`` as a tensor and register ``vjp`` on the active tape.

    ``vjp(g)`` receives the upstream gradient (shape of the output) and must
    return one gradient (or None) per parent, in order.
    """
    out = Tensor(out_data)
    tape = _active_tape()
    parents = tuple(parents)
    if tape is not None and any(_needs_grad(p) for p in parents):
        tape.record(out, parents, vjp)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    return record(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.data / b.data
    return record(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def psi_n(x: Tensor) -> Tensor:
    """sgn(x) log(1 + |x|), with derivative 1 / (1 + |x|)."""
    x = tensor(x)
    out = np.sign(x.data) * np.log1p(np.abs(x.data))
    return record(out, (x,), lambda g: (g / (1.0 + np.abs(x.data)),))


def activate(x: Tensor, kind: str) -> Tensor:
    x = tensor(x)
    if kind == "relu":
        mask = x.data > 0
        return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))
    if kind == "tanh":
        out = np.tanh(x.data)
        return record(out, (x,), lambda g: (g * (1.0 - out * out),))
    if kind == "sigmoid":
        out = _sigmoid(x.data)
        return record(out, (x,), lambda g: (g * out * (1.0 - out),))
    raise ValueError(f"unknown activation {kind!r}")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# linear algebra & reductions -------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return record(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """y = x @ w (+ b broadcast over rows)."""
    x, w = tensor(x), tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"affine shape mismatch: x{x.shape} vs w{w.shape}")
    if b is None:
        return record(x.data @ w.data, (x, w), lambda g: (g @ w.data.T, x.data.T @ g))
    b = tensor(b)
    if b.shape != (w.shape[1],):
        raise DimensionError(f"affine bias shape {b.shape} does not match w{w.shape}")
    out = x.data @ w.data + b.data
    return record(out, (x, w, b), lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return record(out, (x,), vjp)


def mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return record(out, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``x[index]``; backward scatters with accumulation."""
    x = tensor(x)
    index = np.asarray(index)

    def vjp(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, index, g)
        return (acc,)

    return record(x.data[index], (x,), vjp)


def segment_sum(x: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    """Row-wise sum of ``x`` into ``n_segments`` buckets given by ``segments``."""
    x = tensor(x)
    segments = np.asarray(segments)
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segments, x.data)
    return record(out, (x,), lambda g: (g[segments],))


def segment_mean(x: Tensor, segments: np.ndarray, n_segments: int) -> Tensor:
    counts = np.bincount(np.asarray(segments), minlength=n_segments).astype(np.float64)
    if np.any(counts == 0):
        raise DimensionError("segment_mean: empty segment")
    shape = (n_segments,) + (1,) * (x.data.ndim - 1)
    return mul(segment_sum(x, segments, n_segments), 1.0 / counts.reshape(shape))


def mink_inner(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise Minkowski product of (..., 4) tensors, trailing axis kept as 1."""
    a, b = tensor(a), tensor(b)
    signs = np.array([1.0, -1.0, -1.0, -1.0])
    out = (a.data * b.data * signs).sum(axis=-1, keepdims=True)
    return record(out, (a, b), lambda g: (g * b.data * signs, g * a.data * signs))


# losses & regularisation -----------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: Tensor, labels) -> tuple[Tensor, Tensor]:
    """Mean cross-entropy over the batch, stabilised by max subtraction."""
    logits = tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} vs labels {labels.shape}")
    n, c = logits.shape
    if n < 1:
        raise DimensionError("softmax_xent needs at least one row")
    if np.any(labels < 0) or np.any(labels >= c):
        raise IndexError(f"labels must lie in [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    probs = np.exp(log_probs)
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()

    def vjp(g):
        d = probs.copy()
        d[rows, labels] -= 1.0
        return (d * (g / n),)

    return record(np.array(loss), (logits,), vjp), Tensor(probs)


def dropout(x: Tensor, p: float, training: bool, rng_seed) -> Tensor:
    """Inverted dropout. ``rng_seed`` may be an int or a tuple of ints."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    x = tensor(x)
    if not training or p == 0.0:
        return x
    rng = np.random.default_rng(rng_seed)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return record(x.data * mask, (x,), lambda g: (g * mask,))
