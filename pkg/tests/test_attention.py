import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amfd import tensor as T
from amfd.attention import (
    attention_arrays,
    channel_attention,
    spatial_attention,
)
from amfd.errors import NonFiniteValue, ShapeMismatch


def feat(arr):
    return T.Tensor(np.asarray(arr, dtype=float))


class TestSpatial:
    def test_constant_feature_gives_ones(self):
        att = spatial_attention(feat(np.full((3, 4, 5), 2.0)))
        assert np.allclose(att.grid.data, 1.0, atol=1e-12)
        assert att.source_shape == (3, 4, 5)

    def test_degenerate_single_pixel(self):
        att = spatial_attention(feat(np.full((1, 1, 1), -7.0)))
        assert att.grid.data[0, 0] == pytest.approx(1.0)

    def test_closed_form_two_pixels(self):
        # channel-mean abs per column: [1, 1 + ln 2] -> softmax gap ln 2
        x = np.zeros((2, 1, 2))
        x[:, 0, 0] = 1.0
        x[:, 0, 1] = 1.0 + math.log(2.0)
        att = spatial_attention(feat(x))
        assert att.grid.data[0, 0] == pytest.approx(2.0 / 3.0, abs=1e-6)
        assert att.grid.data[0, 1] == pytest.approx(4.0 / 3.0, abs=1e-6)


class TestChannel:
    def test_constant_feature_gives_ones(self):
        att = channel_attention(feat(np.full((5, 2, 2), -3.0)))
        assert np.allclose(att.weights.data, 1.0, atol=1e-12)

    def test_closed_form_two_channels(self):
        x = np.zeros((2, 1, 1))
        x[0] = 0.0
        x[1] = math.log(3.0)
        att = channel_attention(feat(x))
        assert np.max(np.abs(att.weights.data - [0.5, 1.5])) < 1e-12

    def test_pixel_permutation_invariance(self):
        rng = np.random.default_rng(0)
        x = rng.normal(0, 1, (3, 2, 4))
        perm = rng.permutation(8)
        xp = x.reshape(3, 8)[:, perm].reshape(3, 2, 4)
        a = channel_attention(feat(x)).weights.data
        b = channel_attention(feat(xp)).weights.data
        assert np.max(np.abs(a - b)) < 1e-12


class TestInvariants:
    @given(st.integers(1, 6), st.integers(1, 5), st.integers(1, 5),
           st.integers(0, 10_000))
    @settings(max_examples=50, deadline=None)
    def test_sums(self, c, h, w, seed):
        x = np.random.default_rng(seed).normal(0, 3, (c, h, w))
        a_s, a_c = attention_arrays(x)
        assert abs(a_s.sum() - h * w) < 1e-9
        assert abs(a_c.sum() - c) < 1e-9
        assert np.all(a_s >= 0) and np.all(a_c >= 0)

    def test_sign_invariance(self):
        rng = np.random.default_rng(1)
        x = rng.normal(0, 1, (4, 3, 3))
        sp, cp = attention_arrays(x)
        sn, cn = attention_arrays(-x)
        assert np.array_equal(sp, sn)
        assert np.array_equal(cp, cn)

    def test_spatial_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(0, 1, (3, 2, 4))
        perm = rng.permutation(8)
        xp = x.reshape(3, 8)[:, perm].reshape(3, 2, 4)
        a = attention_arrays(x)[0].ravel()
        b = attention_arrays(xp)[0].ravel()
        assert np.max(np.abs(a[perm] - b)) < 1e-12

    def test_channel_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(0, 1, (5, 2, 2))
        perm = rng.permutation(5)
        a = attention_arrays(x)[1]
        b = attention_arrays(x[perm])[1]
        # permutation changes softmax accumulation order: equal to roundoff
        assert np.max(np.abs(a[perm] - b)) < 1e-12
        assert np.max(np.abs(attention_arrays(x)[0] - attention_arrays(x[perm])[0])) < 1e-12

    def test_gradients_vs_fd(self):
        rng = np.random.default_rng(4)
        x = T.Tensor(rng.normal(0, 1, (3, 3, 2)) + 0.1, requires_grad=True)
        cs = rng.normal(0, 1, (3, 2))
        cc = rng.normal(0, 1, 3)

        def f(t):
            s = T.tsum(T.mul(spatial_attention(t).grid, T.Tensor(cs)))
            c = T.tsum(T.mul(channel_attention(t).weights, T.Tensor(cc)))
            return T.add(s, c)

        with T.tape():
            T.backward(f(x))
        fd = T.finite_diff_grad(f, T.Tensor(x.data))
        rel = np.abs(x.grad - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() < 1e-4


class TestErrors:
    def test_rank_checked(self):
        with pytest.raises(ShapeMismatch):
            spatial_attention(T.Tensor(np.zeros((2, 2))))

    def test_non_finite_rejected(self):
        t = T.Tensor(np.zeros((1, 2, 2)))
        t.data[0, 0, 0] = np.nan  # bypass constructor check deliberately
        with pytest.raises(NonFiniteValue):
            spatial_attention(t)
