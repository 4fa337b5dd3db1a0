# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot numeric kernels.

Signature-compatible with ``_kernels_py``; selected by :mod:`amfd.backend`
when the extension built. Loops are fused where the NumPy fallback needs
temporaries, which is where the speedup comes from at desk-scale shapes.
"""

import numpy as np

from libc.math cimport exp, fabs


def channel_mix_fwd(double[:, ::1] w, double[::1] b, double[:, ::1] x):
    cdef Py_ssize_t O = w.shape[0], I = w.shape[1], P = x.shape[1]
    cdef Py_ssize_t o, i, p
    cdef double acc, wv
    out_arr = np.empty((O, P), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for o in range(O):
        for p in range(P):
            out[o, p] = b[o]
        for i in range(I):
            wv = w[o, i]
            for p in range(P):
                out[o, p] += wv * x[i, p]
    return out_arr


def channel_mix_bwd_x(double[:, ::1] w, double[:, ::1] gy):
    cdef Py_ssize_t O = w.shape[0], I = w.shape[1], P = gy.shape[1]
    cdef Py_ssize_t o, i, p
    cdef double wv
    gx_arr = np.zeros((I, P), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    for o in range(O):
        for i in range(I):
            wv = w[o, i]
            for p in range(P):
                gx[i, p] += wv * gy[o, p]
    return gx_arr


def channel_mix_bwd_w(double[:, ::1] x, double[:, ::1] gy):
    cdef Py_ssize_t I = x.shape[0], P = x.shape[1], O = gy.shape[0]
    cdef Py_ssize_t o, i, p
    cdef double acc
    gw_arr = np.empty((O, I), dtype=np.float64)
    gb_arr = np.empty(O, dtype=np.float64)
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    for o in range(O):
        acc = 0.0
        for p in range(P):
            acc += gy[o, p]
        gb[o] = acc
        for i in range(I):
            acc = 0.0
            for p in range(P):
                acc += gy[o, p] * x[i, p]
            gw[o, i] = acc
    return gw_arr, gb_arr


def softmax1d_fwd(double[::1] v):
    cdef Py_ssize_t N = v.shape[0]
    cdef Py_ssize_t i
    cdef double m = v[0], s = 0.0
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(1, N):
        if v[i] > m:
            m = v[i]
    for i in range(N):
        out[i] = exp(v[i] - m)
        s += out[i]
    for i in range(N):
        out[i] /= s
    return out_arr


def softmax1d_bwd(double[::1] p, double[::1] g):
    cdef Py_ssize_t N = p.shape[0]
    cdef Py_ssize_t i
    cdef double dot = 0.0
    out_arr = np.empty(N, dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(N):
        dot += g[i] * p[i]
    for i in range(N):
        out[i] = p[i] * (g[i] - dot)
    return out_arr


def sq_diff_sum_fwd(double[::1] a, double[::1] b):
    cdef Py_ssize_t i
    cdef double acc = 0.0, d
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        acc += d * d
    return acc


def sq_diff_sum_bwd(double[::1] a, double[::1] b, double g):
    cdef Py_ssize_t i
    cdef double g2 = 2.0 * g
    out_arr = np.empty(a.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(a.shape[0]):
        out[i] = g2 * (a[i] - b[i])
    return out_arr


def abs_diff_sum_fwd(double[::1] a, double[::1] b):
    cdef Py_ssize_t i
    cdef double acc = 0.0
    for i in range(a.shape[0]):
        acc += fabs(a[i] - b[i])
    return acc


def abs_diff_sum_bwd(double[::1] a, double[::1] b, double g):
    cdef Py_ssize_t i
    cdef double d
    out_arr = np.empty(a.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        out[i] = g if d > 0.0 else (-g if d < 0.0 else 0.0)
    return out_arr


def weighted_sq_diff_sum_fwd(double[::1] w, double[::1] a, double[::1] b):
    cdef Py_ssize_t i
    cdef double acc = 0.0, d
    for i in range(a.shape[0]):
        d = a[i] - b[i]
        acc += w[i] * d * d
    return acc


def weighted_sq_diff_sum_bwd(double[::1] w, double[::1] a, double[::1] b, double g):
    cdef Py_ssize_t i
    cdef double g2 = 2.0 * g
    out_arr = np.empty(a.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(a.shape[0]):
        out[i] = g2 * w[i] * (a[i] - b[i])
    return out_arr


def mean_abs_axis0_fwd(double[:, ::1] x):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, p
    out_arr = np.zeros(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    for c in range(C):
        for p in range(P):
            out[p] += fabs(x[c, p])
    for p in range(P):
        out[p] /= C
    return out_arr


def mean_abs_axis0_bwd(double[:, ::1] x, double[::1] g):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, p
    cdef double gv
    gx_arr = np.empty((C, P), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    for c in range(C):
        for p in range(P):
            gv = g[p] / C
            gx[c, p] = gv if x[c, p] > 0.0 else (-gv if x[c, p] < 0.0 else 0.0)
    return gx_arr


def mean_abs_axis1_fwd(double[:, ::1] x):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, p
    cdef double acc
    out_arr = np.empty(C, dtype=np.float64)
    cdef double[::1] out = out_arr
    for c in range(C):
        acc = 0.0
        for p in range(P):
            acc += fabs(x[c, p])
        out[c] = acc / P
    return out_arr


def mean_abs_axis1_bwd(double[:, ::1] x, double[::1] g):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, p
    cdef double gv
    gx_arr = np.empty((C, P), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    for c in range(C):
        gv = g[c] / P
        for p in range(P):
            gx[c, p] = gv if x[c, p] > 0.0 else (-gv if x[c, p] < 0.0 else 0.0)
    return gx_arr


def pixel_weighted_sum_fwd(double[:, ::1] x, double[::1] p):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, j
    cdef double acc
    out_arr = np.empty(C, dtype=np.float64)
    cdef double[::1] out = out_arr
    for c in range(C):
        acc = 0.0
        for j in range(P):
            acc += x[c, j] * p[j]
        out[c] = acc
    return out_arr


def pixel_weighted_sum_bwd(double[:, ::1] x, double[::1] p, double[::1] g):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, j
    cdef double gv
    gx_arr = np.empty((C, P), dtype=np.float64)
    gp_arr = np.zeros(P, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gp = gp_arr
    for c in range(C):
        gv = g[c]
        for j in range(P):
            gx[c, j] = gv * p[j]
            gp[j] += gv * x[c, j]
    return gx_arr, gp_arr


def mean_abs0_softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, p
    u_arr = np.zeros(P, dtype=np.float64)
    cdef double[::1] u = u_arr
    for c in range(C):
        for p in range(P):
            u[p] += fabs(x[c, p])
    for p in range(P):
        u[p] /= C
    return softmax1d_fwd(u)


def mean_abs0_softmax_bwd(double[:, ::1] x, double[::1] p, double[::1] gp):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, j
    cdef double gv
    gu_arr = softmax1d_bwd(p, gp)
    cdef double[::1] gu = gu_arr
    gx_arr = np.empty((C, P), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    for c in range(C):
        for j in range(P):
            gv = gu[j] / C
            gx[c, j] = gv if x[c, j] > 0.0 else (-gv if x[c, j] < 0.0 else 0.0)
    return gx_arr


def mean_abs1_softmax_fwd(double[:, ::1] x):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, p
    cdef double acc
    u_arr = np.empty(C, dtype=np.float64)
    cdef double[::1] u = u_arr
    for c in range(C):
        acc = 0.0
        for p in range(P):
            acc += fabs(x[c, p])
        u[c] = acc / P
    return softmax1d_fwd(u)


def mean_abs1_softmax_bwd(double[:, ::1] x, double[::1] p, double[::1] gp):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, j
    cdef double gv
    gu_arr = softmax1d_bwd(p, gp)
    cdef double[::1] gu = gu_arr
    gx_arr = np.empty((C, P), dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    for c in range(C):
        gv = gu[c] / P
        for j in range(P):
            gx[c, j] = gv if x[c, j] > 0.0 else (-gv if x[c, j] < 0.0 else 0.0)
    return gx_arr


def context_pool_fwd(double[::1] w1, double b1, double[:, ::1] x):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, j
    s_arr = np.full(P, b1, dtype=np.float64)
    cdef double[::1] s = s_arr
    for c in range(C):
        for j in range(P):
            s[j] += w1[c] * x[c, j]
    probs_arr = softmax1d_fwd(s_arr)
    cdef double[::1] probs = probs_arr
    ctx_arr = np.empty(C, dtype=np.float64)
    cdef double[::1] ctx = ctx_arr
    cdef double acc
    for c in range(C):
        acc = 0.0
        for j in range(P):
            acc += x[c, j] * probs[j]
        ctx[c] = acc
    return probs_arr, ctx_arr


def context_pool_bwd(double[::1] w1, double[:, ::1] x, double[::1] probs,
                     double[::1] gctx):
    cdef Py_ssize_t C = x.shape[0], P = x.shape[1]
    cdef Py_ssize_t c, j
    cdef double gv, acc, gb = 0.0
    gp_arr = np.zeros(P, dtype=np.float64)
    cdef double[::1] gp = gp_arr
    for c in range(C):
        gv = gctx[c]
        for j in range(P):
            gp[j] += gv * x[c, j]
    gs_arr = softmax1d_bwd(probs, gp_arr)
    cdef double[::1] gs = gs_arr
    gx_arr = np.empty((C, P), dtype=np.float64)
    gw_arr = np.empty(C, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] gw = gw_arr
    for c in range(C):
        gv = gctx[c]
        acc = 0.0
        for j in range(P):
            gx[c, j] = gv * probs[j] + w1[c] * gs[j]
            acc += x[c, j] * gs[j]
        gw[c] = acc
    for j in range(P):
        gb += gs[j]
    return gx_arr, gw_arr, gb
