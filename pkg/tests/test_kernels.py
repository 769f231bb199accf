"""The compiled kernels and the numpy fallback must agree."""

import numpy as np
import pytest

from selftrain import _kernels_py as py
from selftrain import kernels

compiled = pytest.importorskip("selftrain._kernels")


def packed(rng, n_docs=20, vocab=30, max_len=12):
    lens = rng.integers(1, max_len, size=n_docs)
    offsets = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    flat = rng.integers(0, vocab, size=offsets[-1]).astype(np.int64)
    return flat, offsets


def test_backend_flag():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.parametrize("seed", range(5))
def test_pool_forward(seed):
    rng = np.random.default_rng(seed)
    flat, offsets = packed(rng)
    emb = rng.normal(size=(30, 6))
    docs = rng.permutation(20)[:7].astype(np.int64)
    np.testing.assert_allclose(compiled.pool_forward(emb, flat, offsets, docs),
                               py.pool_forward(emb, flat, offsets, docs), rtol=0, atol=1e-13)


@pytest.mark.parametrize("seed", range(5))
def test_pool_backward(seed):
    rng = np.random.default_rng(seed)
    flat, offsets = packed(rng)
    docs = np.array([3, 3, 5, 0], dtype=np.int64)
    grad = rng.normal(size=(4, 6))
    a, b = np.zeros((30, 6)), np.zeros((30, 6))
    compiled.pool_backward(grad, flat, offsets, docs, a)
    py.pool_backward(grad, flat, offsets, docs, b)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_pool_backward_is_adjoint(rng):
    """<pool(E), G> == <E, pool^T(G)> for the mean-pool linear map."""
    flat, offsets = packed(rng)
    docs = np.arange(20, dtype=np.int64)
    emb, grad = rng.normal(size=(30, 6)), rng.normal(size=(20, 6))
    back = np.zeros_like(emb)
    kernels.pool_backward(grad, flat, offsets, docs, back)
    assert np.sum(kernels.pool_forward(emb, flat, offsets, docs) * grad) == pytest.approx(np.sum(emb * back))


def test_adam_update(rng):
    args = [rng.normal(size=50) for _ in range(4)]
    p1, g, m1, v1 = (a.copy() for a in args)
    v1 = np.abs(v1)
    p2, m2, v2 = p1.copy(), m1.copy(), v1.copy()
    compiled.adam_update(p1, g, m1, v1, 0.01, 0.9, 0.98, 1e-6, 0.1, 0.02)
    py.adam_update(p2, g, m2, v2, 0.01, 0.9, 0.98, 1e-6, 0.1, 0.02)
    for a, b in ((p1, p2), (m1, m2), (v1, v2)):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_cbow_epoch(rng):
    flat, offsets = packed(rng, n_docs=15, max_len=20)
    doc_of = np.repeat(np.arange(15, dtype=np.int64), np.diff(offsets))
    masked = (rng.random(len(flat)) < 0.2).astype(np.uint8)
    positions = rng.permutation(np.flatnonzero(masked)).astype(np.int64)
    negatives = rng.integers(3, 30, size=(len(positions), 4)).astype(np.int64)
    emb = rng.normal(scale=0.1, size=(30, 5))
    out = rng.normal(scale=0.1, size=(30, 5))
    results = []
    for impl in (compiled, py):
        e, o = emb.copy(), out.copy()
        loss, used = impl.cbow_epoch(e, o, flat, doc_of, offsets, masked, positions, negatives,
                                     3, 0.1, 0.01, True)
        results.append((loss, used, e, o))
    (l1, u1, e1, o1), (l2, u2, e2, o2) = results
    assert u1 == u2 and l1 == pytest.approx(l2, rel=1e-12)
    np.testing.assert_allclose(e1, e2, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(o1, o2, rtol=1e-12, atol=1e-14)
