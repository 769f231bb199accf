"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N wall time for each backend
and the speedup. Inputs are shaped like the default experiment: 64-d
embeddings over a 2,000-token vocabulary, 16-document batches of 30-80
tokens, and a pretraining epoch over 2,000 documents.
"""

import argparse
import time

import numpy as np

from selftrain import _kernels_py

try:
    from selftrain import _kernels
except ImportError:  # extension not built
    _kernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_inputs(rng, n_docs, vocab=2000, dim=64):
    lens = rng.integers(30, 81, size=n_docs)
    offsets = np.zeros(n_docs + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    flat = rng.integers(3, vocab, size=offsets[-1]).astype(np.int64)
    emb = rng.uniform(-0.08, 0.08, size=(vocab, dim))
    return flat, offsets, emb


def cases(rng):
    flat, offsets, emb = make_inputs(rng, 4000)
    batches = [rng.permutation(4000)[:16].astype(np.int64) for _ in range(250)]
    grad = rng.normal(size=(16, emb.shape[1]))

    def forward(impl):
        return lambda: [impl.pool_forward(emb, flat, offsets, b) for b in batches]

    def backward(impl):
        out = np.zeros_like(emb)
        return lambda: [impl.pool_backward(grad, flat, offsets, b, out) for b in batches]

    n_params = 2000 * 64 + 64 * 64 + 64 + 64 * 2 + 2
    p, g = rng.normal(size=n_params), rng.normal(size=n_params)

    def adam(impl):
        m, v = np.zeros(n_params), np.zeros(n_params)
        return lambda: [impl.adam_update(p, g, m, v, 1e-3, 0.9, 0.98, 1e-6, 0.5, 0.1)
                        for _ in range(50)]

    pflat, poffsets, pemb = make_inputs(rng, 2000)
    doc_of = np.repeat(np.arange(2000, dtype=np.int64), np.diff(poffsets))
    masked = (rng.random(len(pflat)) < 0.15).astype(np.uint8)
    positions = rng.permutation(np.flatnonzero(masked)).astype(np.int64)
    negatives = rng.integers(3, 2000, size=(len(positions), 10)).astype(np.int64)

    def cbow(impl):
        def run():
            e, o = pemb.copy(), np.zeros_like(pemb)
            impl.cbow_epoch(e, o, pflat, doc_of, poffsets, masked, positions, negatives, 5,
                            0.05, 0.01, True)
        return run

    return {"pool_forward x250": forward, "pool_backward x250": backward, "adam_update x50": adam,
            "cbow_epoch (2k docs)": cbow}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<24}{'numpy (s)':>12}{'compiled (s)':>14}{'speedup':>10}")
    for name, make in cases(rng).items():
        py = best_of(make(_kernels_py), args.repeat)
        if _kernels is None:
            print(f"{name:<24}{py:>12.4f}{'n/a':>14}{'':>10}")
            continue
        c = best_of(make(_kernels), args.repeat)
        print(f"{name:<24}{py:>12.4f}{c:>14.4f}{py / c:>9.1f}x")


if __name__ == "__main__":
    main()
