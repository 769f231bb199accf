"""Pure numpy versions of the compiled kernels.

Used when the extension is not built or when ``SELFTRAIN_PURE_PYTHON=1``.
Results agree with the compiled versions up to floating-point summation
order; within one backend everything is deterministic.
"""

import numpy as np


def _gather_index(offsets, docs):
    starts = offsets[docs]
    lens = offsets[docs + 1] - starts
    seg = np.zeros(len(docs), dtype=np.int64)
    np.cumsum(lens[:-1], out=seg[1:])
    idx = np.repeat(starts - seg, lens) + np.arange(lens.sum())
    return idx, seg, lens


def pool_forward(emb, flat, offsets, docs):
    idx, seg, lens = _gather_index(offsets, docs)
    sums = np.add.reduceat(emb[flat[idx]], seg, axis=0)
    return sums / lens[:, None]


def pool_backward(grad_out, flat, offsets, docs, grad_emb):
    idx, _, lens = _gather_index(offsets, docs)
    rows = np.repeat(grad_out / lens[:, None], lens, axis=0)
    np.add.at(grad_emb, flat[idx], rows)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bias1, bias2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)


def cbow_epoch(emb, out_w, flat, doc_of, offsets, masked, positions, negatives,
               window, lr_start, lr_end, update=True):
    n_pred = len(positions)
    total = 0.0
    used = 0
    for i in range(n_pred):
        p = positions[i]
        doc = doc_of[p]
        lo = max(p - window, offsets[doc])
        hi = min(p + window + 1, offsets[doc + 1])
        ctx = np.arange(lo, hi)
        ctx = ctx[(ctx != p) & (masked[lo:hi] == 0)]
        if len(ctx) == 0:
            continue
        ctx_tok = flat[ctx]
        h = emb[ctx_tok].sum(axis=0) / len(ctx)
        cands = np.concatenate(([flat[p]], negatives[i]))
        s = out_w[cands] @ h
        e = np.exp(s - s.max())
        z = e.sum()
        total += np.log(z) - np.log(e[0])
        used += 1
        if not update:
            continue
        lr = lr_start + (lr_end - lr_start) * i / n_pred
        g = e / z
        g[0] -= 1.0
        dh = np.zeros_like(h)
        # sequential so a negative equal to the target sees the updated row
        for c, cand in enumerate(cands):
            dh += g[c] * out_w[cand]
            out_w[cand] -= lr * g[c] * h
        np.subtract.at(emb, ctx_tok, lr * dh / len(ctx))
    return total, used
