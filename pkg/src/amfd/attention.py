"""Spatial and channel attention maps of a feature grid.

The spatial map softmax-normalizes the per-pixel channel-mean of absolute
values and rescales by H*W, so its entries always sum to H*W; the channel
map does the same over per-channel pixel means, rescaled by C. Both are
deterministic functionals of the feature (nothing learned) and are
recomputed from the feature on every call, as single fused tape ops, so
gradients stay exact.
"""

from dataclasses import dataclass

import numpy as np

from . import backend as K
from .errors import NonFiniteValue, ShapeMismatch
from .tensor import Tensor, accumulate_owned, make_op


@dataclass(frozen=True)
class SpatialAttention:
    """H x W grid of nonnegative weights summing to H*W."""

    grid: Tensor
    source_shape: tuple[int, int, int]


@dataclass(frozen=True)
class ChannelAttention:
    """Length-C vector of nonnegative weights summing to C."""

    weights: Tensor
    source_shape: tuple[int, int, int]


def _check_feature(x: Tensor) -> tuple[int, int, int]:
    if x.data.ndim != 3:
        raise ShapeMismatch(f"attention input must be (C,H,W), got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NonFiniteValue("attention input contains non-finite values")
    return x.shape  # type: ignore[return-value]


def spatial_map(x: Tensor) -> Tensor:
    """H*W-scaled softmax over pixels of the channel-mean absolute value."""
    c, h, w = _check_feature(x)
    n = h * w
    x2 = x.data.reshape(c, n)
    p = np.asarray(K.mean_abs0_softmax_fwd(x2))

    def bwd(g):
        gp = np.ascontiguousarray(g.reshape(n) * n)
        accumulate_owned(x, np.asarray(K.mean_abs0_softmax_bwd(x2, p, gp)).reshape(c, h, w))

    return make_op((p * n).reshape(h, w), (x,), bwd)


def channel_vector(x: Tensor) -> Tensor:
    """C-scaled softmax over channels of the per-channel mean absolute value."""
    c, h, w = _check_feature(x)
    x2 = x.data.reshape(c, h * w)
    p = np.asarray(K.mean_abs1_softmax_fwd(x2))

    def bwd(g):
        gp = np.ascontiguousarray(g * c)
        accumulate_owned(x, np.asarray(K.mean_abs1_softmax_bwd(x2, p, gp)).reshape(c, h, w))

    return make_op(p * c, (x,), bwd)


def spatial_attention(x: Tensor) -> SpatialAttention:
    return SpatialAttention(grid=spatial_map(x), source_shape=tuple(x.shape))


def channel_attention(x: Tensor) -> ChannelAttention:
    return ChannelAttention(weights=channel_vector(x), source_shape=tuple(x.shape))


def attention_arrays(feat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both maps of a constant feature as plain arrays (no tape involvement)."""
    c, h, w = feat.shape
    x2 = np.ascontiguousarray(feat.reshape(c, h * w))
    a_s = np.asarray(K.mean_abs0_softmax_fwd(x2)) * (h * w)
    a_c = np.asarray(K.mean_abs1_softmax_fwd(x2)) * c
    return a_s.reshape(h, w), a_c
