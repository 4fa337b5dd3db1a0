"""NumPy implementations of the hot numeric kernels.

These are the fallback bodies behind :mod:`amfd.backend`; the compiled
extension in ``_ckernels.pyx`` implements the same signatures. All arrays
are float64 and C-contiguous. None of these functions know about
autodiff; the tape layer in :mod:`amfd.tensor` wires them up.
"""

import numpy as np


def channel_mix_fwd(w, b, x):
    # x: (C_in, P), w: (C_out, C_in), b: (C_out,) -> (C_out, P)
    return w @ x + b[:, None]


def channel_mix_bwd_x(w, gy):
    return w.T @ gy


def channel_mix_bwd_w(x, gy):
    return gy @ x.T, gy.sum(axis=1)


def softmax1d_fwd(v):
    e = np.exp(v - v.max())
    return e / e.sum()


def softmax1d_bwd(p, g):
    return p * (g - float(g @ p))


def sq_diff_sum_fwd(a, b):
    d = a - b
    return float(d @ d)


def sq_diff_sum_bwd(a, b, g):
    return (2.0 * g) * (a - b)


def abs_diff_sum_fwd(a, b):
    return float(np.abs(a - b).sum())


def abs_diff_sum_bwd(a, b, g):
    return g * np.sign(a - b)


def weighted_sq_diff_sum_fwd(w, a, b):
    d = a - b
    return float(w @ (d * d))


def weighted_sq_diff_sum_bwd(w, a, b, g):
    return (2.0 * g) * w * (a - b)


def mean_abs_axis0_fwd(x):
    # x: (C, P) -> (P,)
    return np.abs(x).sum(axis=0) / x.shape[0]


def mean_abs_axis0_bwd(x, g):
    return np.sign(x) * (g / x.shape[0])[None, :]


def mean_abs_axis1_fwd(x):
    # x: (C, P) -> (C,)
    return np.abs(x).sum(axis=1) / x.shape[1]


def mean_abs_axis1_bwd(x, g):
    return np.sign(x) * (g / x.shape[1])[:, None]


def pixel_weighted_sum_fwd(x, p):
    # x: (C, P), p: (P,) -> (C,)
    return x @ p


def pixel_weighted_sum_bwd(x, p, g):
    return np.outer(g, p), x.T @ g


def mean_abs0_softmax_fwd(x):
    # softmax over pixels of the channel-mean absolute value; x: (C, P) -> (P,)
    return softmax1d_fwd(np.abs(x).sum(axis=0) / x.shape[0])


def mean_abs0_softmax_bwd(x, p, gp):
    gu = softmax1d_bwd(p, gp)
    return np.sign(x) * (gu / x.shape[0])[None, :]


def mean_abs1_softmax_fwd(x):
    # softmax over channels of the per-channel mean absolute value; (C, P) -> (C,)
    return softmax1d_fwd(np.abs(x).sum(axis=1) / x.shape[1])


def mean_abs1_softmax_bwd(x, p, gp):
    gu = softmax1d_bwd(p, gp)
    return np.sign(x) * (gu / x.shape[1])[:, None]


def context_pool_fwd(w1, b1, x):
    # scores = w1 . x_j + b1 per pixel, probs = softmax(scores),
    # ctx = sum_j probs_j x_j; x: (C, P), w1: (C,) -> ((P,), (C,))
    probs = softmax1d_fwd(w1 @ x + b1)
    return probs, x @ probs


def context_pool_bwd(w1, x, probs, gctx):
    gp = x.T @ gctx
    gs = softmax1d_bwd(probs, gp)
    gx = np.outer(gctx, probs) + np.outer(w1, gs)
    return gx, x @ gs, float(gs.sum())
