# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Signatures mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, sqrt

cnp.import_array()


def pool_forward(double[:, ::1] emb, const long long[::1] flat,
                 const long long[::1] offsets, const long long[::1] docs):
    cdef Py_ssize_t n = docs.shape[0], d = emb.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k, start, stop
    cdef long long tok
    cdef double inv
    with nogil:
        for i in range(n):
            start = offsets[docs[i]]
            stop = offsets[docs[i] + 1]
            for k in range(start, stop):
                tok = flat[k]
                for j in range(d):
                    out[i, j] += emb[tok, j]
            inv = 1.0 / (stop - start)
            for j in range(d):
                out[i, j] *= inv
    return out_arr


def pool_backward(double[:, ::1] grad_out, const long long[::1] flat,
                  const long long[::1] offsets, const long long[::1] docs,
                  double[:, ::1] grad_emb):
    cdef Py_ssize_t n = docs.shape[0], d = grad_out.shape[1]
    cdef Py_ssize_t i, j, k, start, stop
    cdef long long tok
    cdef double inv
    with nogil:
        for i in range(n):
            start = offsets[docs[i]]
            stop = offsets[docs[i] + 1]
            inv = 1.0 / (stop - start)
            for k in range(start, stop):
                tok = flat[k]
                for j in range(d):
                    grad_emb[tok, j] += grad_out[i, j] * inv


def adam_update(double[::1] param, const double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, double bias1, double bias2):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double g, mh, vh
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            mh = m[i] / bias1
            vh = v[i] / bias2
            param[i] -= lr * mh / (sqrt(vh) + eps)


def cbow_epoch(double[:, ::1] emb, double[:, ::1] out_w,
               const long long[::1] flat, const long long[::1] doc_of,
               const long long[::1] offsets, const unsigned char[::1] masked,
               const long long[::1] positions, const long long[:, ::1] negatives,
               Py_ssize_t window, double lr_start, double lr_end, bint update=True):
    cdef Py_ssize_t n_pred = positions.shape[0], k = negatives.shape[1]
    cdef Py_ssize_t d = emb.shape[1]
    cdef Py_ssize_t i, j, c, q, lo, hi, p, n_ctx, doc
    cdef double lr, mx, z, total = 0.0, g, inv
    cdef long long cand
    cdef Py_ssize_t used = 0
    h_arr = np.zeros(d, dtype=np.float64)
    dh_arr = np.zeros(d, dtype=np.float64)
    s_arr = np.zeros(k + 1, dtype=np.float64)
    cdef double[::1] h = h_arr, dh = dh_arr, s = s_arr
    with nogil:
        for i in range(n_pred):
            p = positions[i]
            doc = doc_of[p]
            lo = p - window
            if lo < offsets[doc]:
                lo = offsets[doc]
            hi = p + window + 1
            if hi > offsets[doc + 1]:
                hi = offsets[doc + 1]
            n_ctx = 0
            for j in range(d):
                h[j] = 0.0
            for q in range(lo, hi):
                if q == p or masked[q]:
                    continue
                n_ctx += 1
                for j in range(d):
                    h[j] += emb[flat[q], j]
            if n_ctx == 0:
                continue
            inv = 1.0 / n_ctx
            for j in range(d):
                h[j] *= inv
            mx = -1e300
            for c in range(k + 1):
                cand = flat[p] if c == 0 else negatives[i, c - 1]
                z = 0.0
                for j in range(d):
                    z += h[j] * out_w[cand, j]
                s[c] = z
                if z > mx:
                    mx = z
            z = 0.0
            for c in range(k + 1):
                s[c] = exp(s[c] - mx)
                z += s[c]
            total += log(z) - log(s[0])
            used += 1
            if not update:
                continue
            lr = lr_start + (lr_end - lr_start) * i / n_pred
            for j in range(d):
                dh[j] = 0.0
            for c in range(k + 1):
                cand = flat[p] if c == 0 else negatives[i, c - 1]
                g = s[c] / z
                if c == 0:
                    g -= 1.0
                for j in range(d):
                    dh[j] += g * out_w[cand, j]
                    out_w[cand, j] -= lr * g * h[j]
            for q in range(lo, hi):
                if q == p or masked[q]:
                    continue
                for j in range(d):
                    emb[flat[q], j] -= lr * dh[j] * inv
    return total, used
