"""Array-level contracts of the convolution/normalization primitives."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudgan.errors import ConfigurationError
from cloudgan.nn import functional as F


def rand(shape, seed=0, dtype=np.float64):
    return np.random.default_rng(seed).standard_normal(shape).astype(dtype)


class TestConv2d:
    def test_halving_shape(self):
        x = rand((1, 1, 256, 256))
        w = rand((8, 1, 4, 4), seed=1)
        y = F.conv2d(x, w, stride=2, padding=1)
        assert y.shape == (1, 8, 128, 128)

    def test_dilated_impulse_footprint(self):
        r = 3
        x = np.zeros((1, 1, 15, 15))
        x[0, 0, 7, 7] = 1.0
        w = np.ones((1, 1, 3, 3))
        y = F.conv2d(x, w, stride=1, dilation=r, padding=r)
        ys, xs = np.nonzero(y[0, 0])
        assert ys.max() - ys.min() + 1 == 2 * r + 1
        assert xs.max() - xs.min() + 1 == 2 * r + 1
        # taps land on the r-spaced lattice around the impulse
        assert sorted(set(ys)) == [7 - r, 7, 7 + r]
        assert len(ys) == 9

    def test_zero_input_gives_bias(self):
        x = np.zeros((2, 3, 8, 8))
        w = rand((4, 3, 3, 3))
        b = np.array([1.0, -2.0, 0.5, 3.0])
        y = F.conv2d(x, w, b, padding=1)
        assert np.allclose(y, b[None, :, None, None])

    def test_linearity(self):
        x1, x2 = rand((1, 2, 6, 6), 1), rand((1, 2, 6, 6), 2)
        w = rand((3, 2, 3, 3), 3)
        lhs = F.conv2d(2.0 * x1 + x2, w)
        rhs = 2.0 * F.conv2d(x1, w) + F.conv2d(x2, w)
        assert np.allclose(lhs, rhs)

    def test_channel_mismatch_names_shapes(self):
        with pytest.raises(ConfigurationError, match=r"\(1, 2, 8, 8\).*\(4, 3, 3, 3\)"):
            F.conv2d(rand((1, 2, 8, 8)), rand((4, 3, 3, 3)))

    def test_too_small_output_rejected(self):
        with pytest.raises(ConfigurationError):
            F.conv2d(rand((1, 1, 2, 2)), rand((1, 1, 5, 5)))

    def test_asymmetric_padding_preserves_size(self):
        # k=4 s=1 with (1, 2) split keeps spatial size
        x = rand((1, 3, 16, 16))
        w = rand((5, 3, 4, 4), 1)
        y = F.conv2d(x, w, stride=1, padding=(1, 2))
        assert y.shape == (1, 5, 16, 16)

    def test_matches_naive_loops(self):
        x = rand((2, 3, 7, 7))
        w = rand((4, 3, 3, 3), 5)
        b = rand((4,), 6)
        y = F.conv2d(x, w, b, stride=2, dilation=2, padding=2)
        ref = naive_conv2d(x, w, b, stride=2, dilation=2, padding=(2, 2))
        assert np.allclose(y, ref, atol=1e-12)


def naive_conv2d(x, w, b, stride, dilation, padding):
    lead, trail = padding
    xp = np.pad(x, ((0, 0), (0, 0), (lead, trail), (lead, trail)))
    bsz, cin, hp, wp = xp.shape
    cout, _, k, _ = w.shape
    ho = (hp - dilation * (k - 1) - 1) // stride + 1
    wo = (wp - dilation * (k - 1) - 1) // stride + 1
    y = np.zeros((bsz, cout, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(k):
                            for v in range(k):
                                acc += (xp[n, c, i * stride + u * dilation,
                                           j * stride + v * dilation]
                                        * w[o, c, u, v])
                    y[n, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return y


class TestConvTranspose2d:
    def test_doubling_shape(self):
        x = rand((1, 512, 32, 32), dtype=np.float32)
        w = rand((512, 8, 4, 4), 1, dtype=np.float32)
        y = F.conv2d_transpose(x, w, stride=2, padding=1)
        assert y.shape == (1, 8, 64, 64)

    def test_stride1_k4_asymmetric_trim(self):
        x = rand((1, 4, 32, 32))
        w = rand((4, 4, 4, 4), 1)
        # symmetric pad=1 leaves 33; the (1, 2) trim recovers 32
        assert F.conv2d_transpose(x, w, stride=1, padding=1).shape[2] == 33
        y = F.conv2d_transpose(x, w, stride=1, padding=(1, 2))
        assert y.shape == (1, 4, 32, 32)

    @pytest.mark.parametrize("size,stride,padding", [(7, 2, 1), (8, 1, 0),
                                                     (7, 2, 0), (8, 1, 1)])
    def test_adjoint_of_conv2d(self, size, stride, padding):
        # <conv(x), y> == <x, deconv(y)>; the raw conv weight array serves as
        # the deconv weight (its leading axis becomes the input-channel axis)
        x = rand((1, 2, size, size), 1)
        w = rand((3, 2, 3, 3), 2)
        cx = F.conv2d(x, w, stride=stride, padding=padding)
        y = rand(cx.shape, 3)
        ty = F.conv2d_transpose(y, w, stride=stride, padding=padding)
        assert ty.shape == x.shape
        lhs = float(np.sum(cx * y))
        rhs = float(np.sum(x * ty))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_adjoint_with_dilation(self):
        x = rand((2, 3, 9, 9), 4)
        w = rand((5, 3, 3, 3), 5)
        cx = F.conv2d(x, w, stride=2, dilation=2, padding=2)
        y = rand(cx.shape, 6)
        ty = F.conv2d_transpose(y, w, stride=2, dilation=2, padding=2)
        assert ty.shape == x.shape
        assert np.isclose(np.sum(cx * y), np.sum(x * ty), rtol=1e-10)


class TestBatchNorm:
    def test_train_normalizes(self):
        x = rand((4, 3, 8, 8), 1) * 5 + 2
        gamma = np.ones(3)
        beta = np.zeros(3)
        y, _ = F.batch_norm_train(x, gamma, beta, eps=1e-5)
        for c in range(3):
            assert abs(y[:, c].mean()) <= 1e-5
            assert abs(y[:, c].var() - 1.0) <= 1e-4

    def test_eval_affine_form(self):
        x = rand((2, 2, 4, 4), 2)
        y = F.batch_norm_eval(x, gamma=np.full(2, 2.0), beta=np.full(2, 3.0),
                              running_mean=np.zeros(2), running_var=np.ones(2),
                              eps=1e-5)
        assert np.allclose(y, 2.0 * x / np.sqrt(1 + 1e-5) + 3.0)

    def test_constant_channel_stabilized(self):
        # zero variance is epsilon-stabilized, not an error
        x = np.full((2, 1, 4, 4), 7.0)
        y, _ = F.batch_norm_train(x, np.ones(1), np.zeros(1), eps=1e-5)
        assert np.allclose(y, 0.0)

    def test_degenerate_batch_rejected(self):
        with pytest.raises(ConfigurationError):
            F.batch_norm_train(rand((1, 3, 1, 1)), np.ones(3), np.zeros(3), 1e-5)


class TestActivationsAndDropout:
    def test_leaky_relu_slope(self):
        assert F.leaky_relu(np.array([-1.0]), 0.2)[0] == pytest.approx(-0.2)

    def test_relu_clamps(self):
        assert F.relu(np.array([-5.0]))[0] == 0.0

    def test_tanh_at_zero(self):
        assert F.tanh(np.array([0.0]))[0] == 0.0

    def test_tanh_open_interval(self):
        y = F.tanh(rand((2, 3, 4, 4)) * 3)
        assert np.all(y > -1) and np.all(y < 1)

    def test_dropout_rate_zero_identity(self):
        x = rand((2, 2, 4, 4))
        y, mask = F.dropout(x, 0.0, train=True, rng=np.random.default_rng(0))
        assert mask is None and y is x

    def test_dropout_eval_identity(self):
        x = rand((2, 2, 4, 4))
        y, mask = F.dropout(x, 0.5, train=False, rng=None)
        assert mask is None and y is x

    def test_dropout_preserves_mean(self):
        x = np.ones(10**6)
        y, _ = F.dropout(x, 0.5, train=True, rng=np.random.default_rng(7))
        assert abs(y.mean() - 1.0) < 0.01


class TestConcat:
    def test_shapes_and_order(self):
        a = rand((1, 3, 4, 4), 1)
        b = rand((1, 1, 4, 4), 2)
        y = F.concat_channels(a, b)
        assert y.shape == (1, 4, 4, 4)
        assert np.array_equal(y[:, 0], a[:, 0])
        assert np.array_equal(y[:, 3], b[:, 0])

    def test_spatial_mismatch(self):
        with pytest.raises(ConfigurationError):
            F.concat_channels(rand((1, 3, 4, 4)), rand((1, 3, 8, 8)))

    def test_split_inverts(self):
        a, b = rand((2, 3, 4, 4), 1), rand((2, 2, 4, 4), 2)
        ra, rb = F.split_channels(F.concat_channels(a, b), 3)
        assert np.array_equal(ra, a) and np.array_equal(rb, b)


# Shape law over the (kernel, stride, dilation, padding) combinations the
# architectures actually use, plus random valid configs.
@settings(max_examples=60, deadline=None)
@given(
    size=st.integers(5, 40),
    kernel=st.sampled_from([1, 3, 4]),
    stride=st.integers(1, 2),
    dilation=st.integers(1, 3),
    pad_lead=st.integers(0, 3),
    pad_trail=st.integers(0, 3),
)
def test_conv_shape_law(size, kernel, stride, dilation, pad_lead, pad_trail):
    expected = F.conv_output_size(size, kernel, stride, dilation,
                                  (pad_lead, pad_trail))
    x = np.zeros((1, 1, size, size))
    w = np.zeros((1, 1, kernel, kernel))
    if expected < 1:
        with pytest.raises(ConfigurationError):
            F.conv2d(x, w, stride=stride, dilation=dilation,
                     padding=(pad_lead, pad_trail))
    else:
        y = F.conv2d(x, w, stride=stride, dilation=dilation,
                     padding=(pad_lead, pad_trail))
        assert y.shape[2] == y.shape[3] == expected


@settings(max_examples=40, deadline=None)
@given(
    size=st.integers(2, 16),
    kernel=st.sampled_from([3, 4]),
    stride=st.integers(1, 2),
    pad_lead=st.integers(0, 2),
    pad_trail=st.integers(0, 2),
)
def test_deconv_shape_law(size, kernel, stride, pad_lead, pad_trail):
    expected = F.deconv_output_size(size, kernel, stride, 1,
                                    (pad_lead, pad_trail))
    x = np.zeros((1, 1, size, size))
    w = np.zeros((1, 1, kernel, kernel))
    if expected < 1:
        with pytest.raises(ConfigurationError):
            F.conv2d_transpose(x, w, stride=stride,
                               padding=(pad_lead, pad_trail))
    else:
        y = F.conv2d_transpose(x, w, stride=stride,
                               padding=(pad_lead, pad_trail))
        assert y.shape[2] == y.shape[3] == expected
