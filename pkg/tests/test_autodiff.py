"""Gradient checks for the reverse-mode engine.

Every op is compared against central finite differences (eps 1e-5) at
relative error below 1e-4, plus exactness checks where closed forms exist.
"""
from __future__ import annotations

import numpy as np

from pocketdraft import autodiff as ad
from pocketdraft import rng as prng


def fd_gradient(fun, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    g = np.zeros_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += eps
        xm[k] -= eps
        g[k] = (fun(xp) - fun(xm)) / (2 * eps)
    return g


def check_grad(build, x0: np.ndarray, tol: float = 1e-4) -> None:
    """build(leaf Tensor or ndarray) -> scalar output; compares grads."""
    leaf = ad.Tensor(x0.copy())
    out = build(leaf)
    ad.backward(out)
    analytic = leaf.grad.reshape(-1)
    numeric = fd_gradient(lambda v: float(ad.value_of(build(v.reshape(x0.shape)))), x0.reshape(-1))
    denom = max(1.0, float(np.abs(numeric).max()))
    assert np.abs(analytic - numeric).max() / denom < tol


def test_add_mul_sub_grads():
    gen = prng.stream(31, "ops")
    a0 = gen.normal(size=(3, 4))
    b = gen.normal(size=(3, 4))
    check_grad(lambda a: ad.sum_all(ad.mul(ad.add(a, b), ad.sub(a, b))), a0)


def test_broadcast_grads():
    gen = prng.stream(31, "bcast")
    a0 = gen.normal(size=(4, 1))
    b = gen.normal(size=(4, 5))
    check_grad(lambda a: ad.sum_all(ad.mul(ad.reshape(a, (4, 1)), b)), a0)
    row0 = gen.normal(size=(5,))
    check_grad(lambda r: ad.sum_all(ad.add(b, r)), row0)


def test_matmul_grad():
    gen = prng.stream(32, "matmul")
    w0 = gen.normal(size=(4, 3))
    x = gen.normal(size=(5, 4))
    t = gen.normal(size=(5, 3))

    def loss(w):
        d = ad.sub(ad.matmul(x, w), t)
        return ad.mean_all(ad.mul(d, d))

    check_grad(loss, w0)


def test_activation_grads():
    gen = prng.stream(33, "act")
    x0 = gen.normal(size=(6, 3)) + 0.1  # keep relu away from its kink
    check_grad(lambda x: ad.sum_all(ad.relu(x)), x0)
    check_grad(lambda x: ad.sum_all(ad.silu(x)), x0)
    check_grad(lambda x: ad.sum_all(ad.sqrt(ad.add(ad.mul(x, x), 1.0))), x0)


def test_gather_scatter_grads():
    gen = prng.stream(34, "gather")
    x0 = gen.normal(size=(5, 3))
    idx = np.array([0, 2, 2, 4, 1, 0])
    seg = np.array([0, 0, 1, 2, 2, 2])
    w = gen.normal(size=(6, 3))

    def loss(x):
        rows = ad.take_rows(x, idx)
        pooled = ad.segment_sum(ad.mul(rows, w), seg, 3)
        return ad.sum_all(ad.mul(pooled, pooled))

    check_grad(loss, x0)


def test_reduction_and_concat_grads():
    gen = prng.stream(35, "reduce")
    x0 = gen.normal(size=(4, 3))
    other = gen.normal(size=(4, 2))

    def loss(x):
        cat = ad.concat_cols([x, other])
        m = ad.mean_rows(cat)
        s = ad.sum_cols(cat)
        return ad.add(ad.mean_all(ad.mul(m, m)), ad.sum_all(ad.mul(s, s)))

    check_grad(loss, x0)


def test_gradient_linearity():
    # d(sum of outputs) equals the sum of per-output gradients.
    gen = prng.stream(36, "linear")
    x0 = gen.normal(size=(3, 3))

    def build(x):
        return ad.mul(x, x)

    leaf = ad.Tensor(x0.copy())
    out = build(leaf)
    ad.backward(out)  # seed of ones = gradient of sum of all outputs
    combined = leaf.grad.copy()

    total = np.zeros_like(x0)
    for i in range(3):
        for j in range(3):
            leaf_ij = ad.Tensor(x0.copy())
            out_ij = build(leaf_ij)
            seed = np.zeros((3, 3))
            seed[i, j] = 1.0
            ad.backward(out_ij, seed=seed)
            total += leaf_ij.grad
    assert np.allclose(combined, total, atol=1e-12)


def test_shared_subexpression_accumulates():
    x = ad.Tensor(np.array([[2.0]]))
    y = ad.mul(x, x)           # x^2
    z = ad.add(y, ad.mul(x, y))  # x^2 + x^3
    ad.backward(ad.sum_all(z))
    assert np.allclose(x.grad, np.array([[2 * 2.0 + 3 * 4.0]]))


def test_inference_path_returns_ndarray():
    a = np.ones((2, 2))
    out = ad.add(ad.matmul(a, a), 1.0)
    assert isinstance(out, np.ndarray)


def test_determinism():
    gen = prng.stream(37, "det")
    x0 = gen.normal(size=(64, 8))
    idx = prng.stream(37, "det", "idx").integers(0, 7, size=64)

    def run():
        leaf = ad.Tensor(x0.copy())
        pooled = ad.segment_sum(ad.silu(leaf), idx, 7)
        ad.backward(ad.mean_all(ad.mul(pooled, pooled)))
        return leaf.grad.tobytes()

    assert run() == run()
