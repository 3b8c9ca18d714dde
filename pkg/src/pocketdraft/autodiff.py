"""Reverse-mode differentiation over float64 numpy arrays.

A forward pass built from the ops below records a graph of :class:`Tensor`
nodes (the tape); :func:`backward` walks it in reverse topological order
and accumulates exact gradients into every leaf. Every op also accepts
plain ndarrays, in which case no tape is built and the raw numpy result
comes back — the same forward code serves training and inference.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "value_of",
    "backward",
    "add",
    "sub",
    "mul",
    "matmul",
    "relu",
    "silu",
    "sqrt",
    "reshape",
    "concat_cols",
    "take_rows",
    "segment_sum",
    "sum_cols",
    "mean_rows",
    "mean_all",
    "sum_all",
]


class Tensor:
    """Tape node: a float64 array plus the recipe for propagating gradients."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tracing(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def _accumulate(t, g) -> None:
    if isinstance(t, Tensor):
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(out: Tensor, seed=1.0) -> None:
    """Accumulate d(out)/d(leaf) into every reachable Tensor's .grad."""
    if not isinstance(out, Tensor):
        raise TypeError("backward expects a Tensor output")
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    out.grad = np.broadcast_to(np.asarray(seed, dtype=np.float64), out.value.shape).copy()
    for node in reversed(order):
        if node._vjp is not None and node.grad is not None:
            node._vjp()


def _parents_of(*xs):
    return tuple(x for x in xs if isinstance(x, Tensor))


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av + bv
    if not _tracing(a, b):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def vjp():
        _accumulate(a, _unbroadcast(out.grad, av.shape))
        _accumulate(b, _unbroadcast(out.grad, bv.shape))

    out._vjp = vjp
    return out


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av - bv
    if not _tracing(a, b):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def vjp():
        _accumulate(a, _unbroadcast(out.grad, av.shape))
        _accumulate(b, _unbroadcast(-out.grad, bv.shape))

    out._vjp = vjp
    return out


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out_v = av * bv
    if not _tracing(a, b):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def vjp():
        _accumulate(a, _unbroadcast(out.grad * bv, av.shape))
        _accumulate(b, _unbroadcast(out.grad * av, bv.shape))

    out._vjp = vjp
    return out


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ValueError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")
    out_v = av @ bv
    if not _tracing(a, b):
        return out_v
    out = Tensor(out_v, _parents_of(a, b))

    def vjp():
        _accumulate(a, out.grad @ bv.T)
        _accumulate(b, av.T @ out.grad)

    out._vjp = vjp
    return out


def relu(a):
    av = value_of(a)
    out_v = np.maximum(av, 0.0)
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, out.grad * (av > 0.0))

    out._vjp = vjp
    return out


def silu(a):
    av = value_of(a)
    sig = 1.0 / (1.0 + np.exp(-av))
    out_v = av * sig
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, out.grad * (sig * (1.0 + av * (1.0 - sig))))

    out._vjp = vjp
    return out


def sqrt(a):
    av = value_of(a)
    out_v = np.sqrt(av)
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, out.grad * (0.5 / out_v))

    out._vjp = vjp
    return out


def reshape(a, shape):
    av = value_of(a)
    out_v = av.reshape(shape)
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, out.grad.reshape(av.shape))

    out._vjp = vjp
    return out


def concat_cols(parts):
    """Concatenate 2-d blocks along axis 1."""
    vals = [value_of(p) for p in parts]
    out_v = np.concatenate(vals, axis=1)
    if not _tracing(*parts):
        return out_v
    out = Tensor(out_v, _parents_of(*parts))
    widths = [v.shape[1] for v in vals]

    def vjp():
        offset = 0
        for p, w in zip(parts, widths):
            _accumulate(p, out.grad[:, offset : offset + w])
            offset += w

    out._vjp = vjp
    return out


def take_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    av = value_of(a)
    out_v = av[idx]
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        g = np.zeros_like(av)
        np.add.at(g, idx, out.grad)
        _accumulate(a, g)

    out._vjp = vjp
    return out


def segment_sum(a, idx, n_segments: int):
    """Sum rows of a into n_segments bins given per-row bin indices."""
    idx = np.asarray(idx, dtype=np.int64)
    av = value_of(a)
    out_v = np.zeros((n_segments,) + av.shape[1:], dtype=np.float64)
    np.add.at(out_v, idx, av)
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, out.grad[idx])

    out._vjp = vjp
    return out


def sum_cols(a):
    """Row-wise sum of a 2-d block, keeping the column axis: (n,d) -> (n,1)."""
    av = value_of(a)
    out_v = av.sum(axis=1, keepdims=True)
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, np.broadcast_to(out.grad, av.shape).copy())

    out._vjp = vjp
    return out


def mean_rows(a):
    """Column means of a 2-d block: (n,d) -> (d,)."""
    av = value_of(a)
    out_v = av.mean(axis=0)
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, np.broadcast_to(out.grad / av.shape[0], av.shape).copy())

    out._vjp = vjp
    return out


def sum_all(a):
    av = value_of(a)
    out_v = np.asarray(av.sum())
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, np.broadcast_to(out.grad, av.shape).copy())

    out._vjp = vjp
    return out


def mean_all(a):
    av = value_of(a)
    out_v = np.asarray(av.mean())
    if not _tracing(a):
        return out_v
    out = Tensor(out_v, _parents_of(a))

    def vjp():
        _accumulate(a, np.broadcast_to(out.grad / av.size, av.shape).copy())

    out._vjp = vjp
    return out
