"""Dense networks, an E(3)-equivariant message-passing layer, and Adam.

The EGNN layer updates node states h and coordinates x from pair messages

    m_uv = phi_e(h_u, h_v, |x_u - x_v|, e_uv)
    x_v' = x_v + coord_scale * mean_u (x_v - x_u) * phi_x(m_uv)
    h_v' = phi_h(h_v, sum_u m_uv)

with u running over the in-neighbours of v. States transform invariantly
and coordinates equivariantly under rotations and translations because
geometry only enters through distances and coordinate differences.

All forwards are written against :mod:`pocketdraft.autodiff` ops, so they
run on plain arrays (inference) or Tensors (training) unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value_of

__all__ = [
    "DenseParams",
    "EgnnLayerParams",
    "AdamState",
    "init_dense",
    "make_egnn_layer",
    "mlp_forward",
    "egnn_layer",
    "adam_step",
    "dense_arrays",
    "egnn_arrays",
    "replace_arrays",
    "n_params",
]

_ACTIVATIONS = {"relu": ad.relu, "silu": ad.silu, "identity": lambda x: x}


@dataclass
class DenseParams:
    """Stacked affine layers; activations name one of relu/silu/identity."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for act in self.activations:
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            wv, bv = value_of(w), value_of(b)
            if wv.ndim != 2 or bv.shape != (wv.shape[1],):
                raise ValueError(f"layer {k}: weight {wv.shape} and bias {bv.shape} mismatch")
            if k > 0 and value_of(self.weights[k - 1]).shape[1] != wv.shape[0]:
                raise ValueError(f"layer {k}: input dim does not match previous output dim")

    @property
    def in_dim(self) -> int:
        return value_of(self.weights[0]).shape[0]

    @property
    def out_dim(self) -> int:
        return value_of(self.weights[-1]).shape[1]


@dataclass
class EgnnLayerParams:
    """One equivariant layer; coord_scale multiplies the mean coordinate update."""

    phi_e: DenseParams
    phi_x: DenseParams
    phi_h: DenseParams
    coord_scale: float = 1.0

    def __post_init__(self):
        if self.phi_x.out_dim != 1:
            raise ValueError("phi_x must map messages to a scalar gate")
        if self.phi_x.in_dim != self.phi_e.out_dim:
            raise ValueError("phi_x input dim must equal the message dim")


def init_dense(dims, activations, rng: np.random.Generator) -> DenseParams:
    """Glorot-uniform weights, zero biases."""
    dims = list(dims)
    activations = list(activations)
    if len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseParams(weights, biases, activations)


def make_egnn_layer(
    h_dim: int, hidden: int, rng: np.random.Generator, edge_dim: int = 0
) -> EgnnLayerParams:
    phi_e = init_dense([2 * h_dim + 1 + edge_dim, hidden, hidden], ["silu", "silu"], rng)
    phi_x = init_dense([hidden, hidden, 1], ["silu", "identity"], rng)
    phi_h = init_dense([h_dim + hidden, hidden, hidden], ["silu", "identity"], rng)
    return EgnnLayerParams(phi_e, phi_x, phi_h)


def mlp_forward(p: DenseParams, x):
    """Apply the stack to (batch, in_dim) input; 1-d input is treated as one row."""
    squeeze = value_of(x).ndim == 1
    if squeeze:
        x = ad.reshape(x, (1, -1))
    if value_of(x).shape[1] != p.in_dim:
        raise ValueError(f"input dim {value_of(x).shape[1]} != expected {p.in_dim}")
    for w, b, act in zip(p.weights, p.biases, p.activations):
        x = _ACTIVATIONS[act](ad.add(ad.matmul(x, w), b))
    if squeeze:
        x = ad.reshape(x, (-1,))
    return x


def egnn_layer(p: EgnnLayerParams, h, x, src, dst, n_nodes: int, edge_feats=None):
    """One message-passing step. src/dst are directed edge endpoints
    (messages flow src -> dst); both directions of an undirected edge must
    be listed for symmetric updates."""
    hv_val, xv_val = value_of(h), value_of(x)
    if not (np.isfinite(hv_val).all() and np.isfinite(xv_val).all()):
        raise ValueError("non-finite node states or coordinates")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)

    h_u = ad.take_rows(h, src)
    h_v = ad.take_rows(h, dst)
    x_u = ad.take_rows(x, src)
    x_v = ad.take_rows(x, dst)
    diff = ad.sub(x_v, x_u)
    dist = ad.sqrt(ad.sum_cols(ad.mul(diff, diff)))

    parts = [h_u, h_v, dist]
    if edge_feats is not None:
        parts.append(edge_feats)
    m = mlp_forward(p.phi_e, ad.concat_cols(parts))
    gate = mlp_forward(p.phi_x, m)

    deg = np.bincount(dst, minlength=n_nodes).astype(np.float64)
    inv_deg = np.divide(
        p.coord_scale, deg, out=np.zeros_like(deg), where=deg > 0
    ).reshape(-1, 1)
    x_update = ad.segment_sum(ad.mul(diff, gate), dst, n_nodes)
    x_new = ad.add(x, ad.mul(x_update, inv_deg))

    m_sum = ad.segment_sum(m, dst, n_nodes)
    h_new = mlp_forward(p.phi_h, ad.concat_cols([h, m_sum]))
    return h_new, x_new


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One Adam update, in place on params. Returns the advanced state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must align")
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def dense_arrays(p: DenseParams) -> list:
    out = []
    for w, b in zip(p.weights, p.biases):
        out.append(w)
        out.append(b)
    return out


def egnn_arrays(p: EgnnLayerParams) -> list:
    return dense_arrays(p.phi_e) + dense_arrays(p.phi_x) + dense_arrays(p.phi_h)


def _replace_dense(p: DenseParams, it) -> DenseParams:
    weights, biases = [], []
    for _ in p.weights:  # dense_arrays interleaves [W0, b0, W1, b1, ...]
        weights.append(next(it))
        biases.append(next(it))
    return DenseParams(weights, biases, list(p.activations))


def _replace_egnn(p: EgnnLayerParams, it) -> EgnnLayerParams:
    return EgnnLayerParams(
        _replace_dense(p.phi_e, it),
        _replace_dense(p.phi_x, it),
        _replace_dense(p.phi_h, it),
        p.coord_scale,
    )


def replace_arrays(p, arrays: list):
    """Rebuild a DenseParams/EgnnLayerParams with the given arrays (which may
    be Tensors) in the order produced by dense_arrays/egnn_arrays."""
    it = iter(arrays)
    if isinstance(p, DenseParams):
        out = _replace_dense(p, it)
    elif isinstance(p, EgnnLayerParams):
        out = _replace_egnn(p, it)
    else:
        raise TypeError(f"cannot rebuild {type(p).__name__}")
    leftovers = sum(1 for _ in it)
    if leftovers:
        raise ValueError(f"{leftovers} extra arrays")
    return out


def n_params(p) -> int:
    if isinstance(p, DenseParams):
        return sum(value_of(a).size for a in dense_arrays(p))
    if isinstance(p, EgnnLayerParams):
        return sum(value_of(a).size for a in egnn_arrays(p))
    raise TypeError(f"cannot count {type(p).__name__}")
