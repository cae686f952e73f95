import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lwanet.errors import ShapeError
from lwanet.ops import (
    ConvSpec,
    add,
    batchnorm,
    bilinear_upsample,
    broadcast_mul_channels,
    conv2d,
    depthwise_conv2d,
    global_avg_pool,
    relu,
    relu6,
    sigmoid,
    softmax_channels,
    transposed_conv2d,
)
from lwanet.tensor import Tensor, no_grad

from conftest import direct_conv2d


def T(a, **kw):
    return Tensor(np.asarray(a), **kw)


class TestConv2d:
    def test_same_padding_shape(self, rng):
        x = T(rng.standard_normal((1, 3, 8, 8)))
        w = T(rng.standard_normal((5, 3, 3, 3)))
        y = conv2d(x, w, None, ConvSpec(3, 5, 3, 1, 1))
        assert y.shape == (1, 5, 8, 8)

    def test_zero_input_gives_zero_output(self, rng):
        x = T(np.zeros((2, 3, 6, 6)))
        w = T(rng.standard_normal((4, 3, 3, 3)))
        b = T(np.zeros(4))
        y = conv2d(x, w, b, ConvSpec(3, 4, 3, 1, 1, has_bias=True))
        assert not y.data.any()

    def test_pointwise_constant_kernel(self):
        x = T(np.ones((1, 1, 3, 3)))
        w = T(np.full((1, 1, 1, 1), 2.0))
        y = conv2d(x, w, None, ConvSpec(1, 1, 1))
        assert np.all(y.data == 2.0)

    def test_matches_direct_definition_bit_exact(self, rng):
        # integer-valued data makes every partial sum exactly representable,
        # so any summation order must agree bit for bit at 64-bit
        for spec in [ConvSpec(3, 4, 3, 1, 1), ConvSpec(4, 6, 3, 2, 0),
                     ConvSpec(4, 4, 3, 1, 1, groups=4), ConvSpec(6, 4, 1, 1, 0, groups=2)]:
            x = rng.integers(-8, 8, (2, spec.in_channels, 7, 7)).astype(np.float64)
            w = rng.integers(-8, 8, (spec.out_channels, spec.in_channels // spec.groups,
                                     spec.kernel, spec.kernel)).astype(np.float64)
            ref = direct_conv2d(x, w, None, spec.stride, spec.padding, spec.groups)
            got = conv2d(T(x), T(w), None, spec).data
            assert np.array_equal(got, ref)

    def test_channel_mismatch_diagnostic(self, rng):
        x = T(rng.standard_normal((1, 3, 8, 8)))
        w = T(rng.standard_normal((5, 4, 3, 3)))
        with pytest.raises(ShapeError, match="channels"):
            conv2d(x, w, None, ConvSpec(4, 5, 3, 1, 1), name="layer encoder.stem")

    def test_linearity_in_input(self, rng):
        spec = ConvSpec(3, 5, 3, 1, 1)
        w = T(rng.standard_normal((5, 3, 3, 3)))
        a, b = 1.7, -0.4
        x = rng.standard_normal((1, 3, 6, 6))
        y = rng.standard_normal((1, 3, 6, 6))
        lhs = conv2d(T(a * x + b * y), w, None, spec).data
        rhs = a * conv2d(T(x), w, None, spec).data + b * conv2d(T(y), w, None, spec).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(h=st.integers(1, 12), w=st.integers(1, 12), k=st.integers(1, 5),
           s=st.integers(1, 3), p=st.integers(0, 2))
    def test_shape_law(self, h, w, k, s, p):
        if h + 2 * p < k or w + 2 * p < k:
            return
        x = T(np.zeros((1, 2, h, w)))
        wt = T(np.zeros((3, 2, k, k)))
        y = conv2d(x, wt, None, ConvSpec(2, 3, k, s, p))
        assert y.shape == (1, 3, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)


class TestDepthwise:
    def test_identity_kernel(self, rng):
        x = T(rng.standard_normal((1, 4, 5, 5)))
        w = T(np.ones((4, 1, 1, 1)))
        y = depthwise_conv2d(x, w, None, ConvSpec(4, 4, 1, groups=4))
        np.testing.assert_array_equal(y.data, x.data)

    def test_shape_law(self, rng):
        x = T(rng.standard_normal((1, 2, 4, 4)))
        w = T(rng.standard_normal((2, 1, 3, 3)))
        y = depthwise_conv2d(x, w, None, ConvSpec(2, 2, 3, 2, 1, groups=2))
        assert y.shape == (1, 2, 2, 2)

    def test_per_channel_independence(self, rng):
        x = rng.standard_normal((1, 3, 6, 6))
        w = T(rng.standard_normal((3, 1, 3, 3)))
        spec = ConvSpec(3, 3, 3, 1, 1, groups=3)
        y0 = depthwise_conv2d(T(x), w, None, spec).data
        x2 = x.copy()
        x2[:, 1] = 0
        y1 = depthwise_conv2d(T(x2), w, None, spec).data
        np.testing.assert_array_equal(y0[:, [0, 2]], y1[:, [0, 2]])
        assert not np.array_equal(y0[:, 1], y1[:, 1])

    def test_rejects_wrong_groups(self, rng):
        x = T(rng.standard_normal((1, 4, 5, 5)))
        w = T(rng.standard_normal((4, 1, 3, 3)))
        with pytest.raises(ShapeError):
            depthwise_conv2d(x, w, None, ConvSpec(4, 4, 3, groups=2))

    def test_dirac_then_pointwise_equals_1x1_conv(self, rng):
        # depthwise separable with center-one depthwise kernels collapses
        # to the pointwise convolution alone
        c, d2, k = 5, 7, 3
        x = T(rng.standard_normal((2, c, 6, 6)))
        dirac = np.zeros((c, 1, k, k))
        dirac[:, 0, k // 2, k // 2] = 1.0
        pw = T(rng.standard_normal((d2, c, 1, 1)))
        mid = depthwise_conv2d(x, T(dirac), None, ConvSpec(c, c, k, 1, k // 2, groups=c))
        y = conv2d(mid, pw, None, ConvSpec(c, d2, 1))
        ref = conv2d(x, pw, None, ConvSpec(c, d2, 1))
        np.testing.assert_allclose(y.data, ref.data, atol=1e-6)


class TestTransposedConv:
    def test_single_cover_all_ones(self):
        x = T(np.ones((1, 1, 2, 2)))
        w = T(np.ones((1, 1, 2, 2)))
        y = transposed_conv2d(x, w, ConvSpec(1, 1, 2, 2, 0))
        assert y.shape == (1, 1, 4, 4)
        np.testing.assert_array_equal(y.data, np.ones((1, 1, 4, 4)))

    def test_zero_input(self, rng):
        x = T(np.zeros((1, 3, 4, 4)))
        w = T(rng.standard_normal((3, 5, 2, 2)))
        y = transposed_conv2d(x, w, ConvSpec(3, 5, 2, 2, 0))
        assert not y.data.any()

    def test_adjoint_identity(self, rng):
        # <conv2d(u), x> == <u, transposed(x)> for random draws
        for _ in range(5):
            spec = ConvSpec(3, 4, 3, 2, 1)
            x = T(rng.standard_normal((1, 4, 5, 5)))  # conv-output shaped
            u = T(rng.standard_normal((1, 3, 9, 9)))  # conv-input shaped
            w_conv = rng.standard_normal((4, 3, 3, 3))
            y = conv2d(u, T(w_conv), None, spec)
            assert y.shape == x.shape
            # transposed weight layout [d1_in, d2_out, k, k] reuses w_conv as-is
            tx = transposed_conv2d(x, T(w_conv), ConvSpec(4, 3, 3, 2, 1))
            lhs = float((y.data * x.data).sum())
            rhs = float((u.data * tx.data).sum())
            assert abs(lhs - rhs) <= 1e-6 * max(1.0, abs(lhs))

    def test_rejects_degenerate_output(self, rng):
        x = T(rng.standard_normal((1, 1, 1, 1)))
        w = T(rng.standard_normal((1, 1, 1, 1)))
        with pytest.raises(ShapeError):
            transposed_conv2d(x, w, ConvSpec(1, 1, 1, 1, 1))


class TestPoolingAndActivations:
    def test_gap_constant(self):
        x = T(np.full((2, 3, 4, 5), 1.25))
        np.testing.assert_allclose(global_avg_pool(x).data, 1.25)

    def test_gap_hand_value(self):
        x = T(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        assert global_avg_pool(x).data.reshape(()) == pytest.approx(2.5)

    def test_gap_linearity(self, rng):
        x = rng.standard_normal((1, 3, 4, 4))
        np.testing.assert_allclose(global_avg_pool(T(3.0 * x)).data,
                                   3.0 * global_avg_pool(T(x)).data, atol=1e-6)

    def test_gap_rejects_empty(self):
        with pytest.raises(ShapeError):
            global_avg_pool(T(np.zeros((1, 2, 0, 3))))

    def test_sigmoid_at_zero(self):
        assert sigmoid(T(np.zeros((1, 1, 1, 1)))).data.reshape(()) == pytest.approx(0.5)

    def test_sigmoid_range_extreme(self):
        y = sigmoid(T(np.array([-1e4, 0.0, 1e4]).reshape(1, 3, 1, 1))).data
        assert np.all(np.isfinite(y)) and np.all((y >= 0) & (y <= 1))

    def test_relu6_clamp(self):
        y = relu6(T(np.array([10.0, -1.0, 3.0]).reshape(1, 3, 1, 1))).data.ravel()
        np.testing.assert_array_equal(y, [6.0, 0.0, 3.0])

    def test_relu(self):
        y = relu(T(np.array([-2.0, 0.0, 5.0]).reshape(1, 3, 1, 1))).data.ravel()
        np.testing.assert_array_equal(y, [0.0, 0.0, 5.0])

    def test_softmax_uniform(self):
        y = softmax_channels(T(np.full((1, 4, 2, 2), 3.0))).data
        np.testing.assert_allclose(y, 0.25, atol=1e-7)

    def test_softmax_sums_to_one(self, rng):
        y = softmax_channels(T(rng.standard_normal((2, 5, 3, 3)) * 30)).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)
        assert np.all((y >= 0) & (y <= 1))


class TestBatchnorm:
    def test_eval_identity_params(self, rng):
        x = T(rng.standard_normal((2, 3, 4, 4)))
        y = batchnorm(x, T(np.ones(3)), T(np.zeros(3)), np.zeros(3), np.ones(3),
                      mode="eval")
        np.testing.assert_allclose(y.data, x.data, atol=1e-4)

    def test_train_normalizes(self, rng):
        x = T(rng.standard_normal((4, 3, 8, 8)) * 3 + 2)
        y = batchnorm(x, T(np.ones(3)), T(np.zeros(3)), np.zeros(3), np.ones(3),
                      mode="train").data
        assert np.abs(y.mean(axis=(0, 2, 3))).max() < 1e-4
        assert np.abs(y.var(axis=(0, 2, 3)) - 1).max() < 1e-3

    def test_momentum_zero_keeps_running_stats(self, rng):
        x = T(rng.standard_normal((2, 3, 4, 4)))
        rm, rv = np.zeros(3), np.ones(3)
        batchnorm(x, T(np.ones(3)), T(np.zeros(3)), rm, rv, mode="train", momentum=0.0)
        np.testing.assert_array_equal(rm, 0.0)
        np.testing.assert_array_equal(rv, 1.0)

    def test_rejects_channel_mismatch(self, rng):
        x = T(rng.standard_normal((2, 3, 4, 4)))
        with pytest.raises(ShapeError):
            batchnorm(x, T(np.ones(4)), T(np.zeros(4)), np.zeros(4), np.ones(4))


class TestElementwise:
    def test_broadcast_mul_identity(self, rng):
        x = T(rng.standard_normal((1, 3, 4, 4)))
        a = T(np.ones((1, 3, 1, 1)))
        np.testing.assert_array_equal(broadcast_mul_channels(x, a).data, x.data)

    def test_broadcast_mul_zeroes_one_channel(self, rng):
        x = T(rng.standard_normal((1, 3, 4, 4)))
        a = np.ones((1, 3, 1, 1))
        a[0, 1] = 0
        y = broadcast_mul_channels(x, T(a)).data
        assert not y[:, 1].any()
        np.testing.assert_array_equal(y[:, [0, 2]], x.data[:, [0, 2]])

    def test_add_mismatch(self, rng):
        with pytest.raises(ShapeError):
            add(T(np.zeros((1, 2, 3, 3))), T(np.zeros((1, 2, 3, 4))))

    def test_bilinear_constant(self):
        x = T(np.full((1, 2, 3, 5), 0.7))
        y = bilinear_upsample(x, 4).data
        assert y.shape == (1, 2, 12, 20)
        np.testing.assert_allclose(y, 0.7, atol=1e-6)

    def test_bilinear_rejects_bad_factor(self):
        with pytest.raises(ShapeError):
            bilinear_upsample(T(np.zeros((1, 1, 2, 2))), 0)


def test_kernels_deterministic(rng):
    x = rng.standard_normal((2, 8, 16, 16)).astype(np.float32)
    w = rng.standard_normal((16, 8, 3, 3)).astype(np.float32)
    spec = ConvSpec(8, 16, 3, 1, 1)
    with no_grad():
        a = conv2d(T(x), T(w), None, spec).data
        b = conv2d(T(x), T(w), None, spec).data
    assert np.array_equal(a, b)
