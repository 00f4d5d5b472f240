import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forward_thinking.errors import DimensionError, DomainError
from forward_thinking.layers import (ConvLayer, DenseLayer, DropoutSpec, OutputHead, conv_forward,
                                     dense_forward, dropout_forward, maxpool_2x2, softmax,
                                     softmax_forward)
from forward_thinking.tensor import SeededRng


def delta_conv(channels):
    f = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        f[c, c, 1, 1] = 1.0
    return ConvLayer(f, np.zeros(channels))


# -- dense ---------------------------------------------------------------

def test_dense_identity_and_zero_cases():
    x = SeededRng(0).normal(0, 1, (4, 3))
    assert np.array_equal(dense_forward(DenseLayer(np.eye(3), np.zeros(3), "identity"), x), x)
    layer = DenseLayer.init(SeededRng(1), 3, 5)
    layer.biases[:] = 0.0
    assert np.array_equal(dense_forward(layer, np.zeros((2, 3))), np.zeros((2, 5)))


def test_dense_matches_per_neuron_oracle():
    r = SeededRng(2)
    layer = DenseLayer(r.normal(0, 1, (5, 3)), r.normal(0, 1, 5))
    x = r.normal(0, 1, (4, 3))
    oracle = np.array([[max(sum(x[i, t] * layer.weights[j, t] for t in range(3)) + layer.biases[j], 0.0)
                        for j in range(5)] for i in range(4)])
    np.testing.assert_allclose(dense_forward(layer, x), oracle, rtol=0, atol=1e-12)


def test_dense_width_mismatch():
    with pytest.raises(DimensionError):
        dense_forward(DenseLayer.init(SeededRng(0), 3, 2), np.zeros((1, 4)))


def test_layer_constructor_validation():
    with pytest.raises(DimensionError):
        DenseLayer(np.zeros((2, 3)), np.zeros(3))
    with pytest.raises(DomainError):
        DenseLayer(np.zeros((2, 3)), np.zeros(2), "tanh")
    with pytest.raises(DimensionError):
        ConvLayer(np.zeros((2, 1, 5, 5)), np.zeros(2))
    with pytest.raises(DomainError):
        DropoutSpec(1.0)


def test_glorot_init_bounds():
    layer = DenseLayer.init(SeededRng(3), 30, 20)
    assert np.abs(layer.weights).max() <= np.sqrt(6 / 50)
    conv = ConvLayer.init(SeededRng(3), 2, 4)
    assert np.abs(conv.filters).max() <= np.sqrt(6 / (2 * 9 + 4 * 9))
    assert np.array_equal(layer.biases, np.zeros(20))


# -- conv ----------------------------------------------------------------

def test_conv_delta_kernel_is_identity_on_nonnegative():
    x = SeededRng(4).random((2, 3, 5, 6))
    assert np.array_equal(conv_forward(delta_conv(3), x), x)


def test_conv_all_ones_filter_counts_neighbours():
    layer = ConvLayer(np.ones((1, 1, 3, 3)), np.zeros(1))
    out = conv_forward(layer, np.ones((1, 1, 5, 5)))[0, 0]
    expect = np.full((5, 5), 9.0)
    expect[0, :] = expect[-1, :] = expect[:, 0] = expect[:, -1] = 6.0
    expect[0, 0] = expect[0, -1] = expect[-1, 0] = expect[-1, -1] = 4.0
    assert np.array_equal(out, expect)


def test_conv_matches_direct_summation():
    r = SeededRng(5)
    layer = ConvLayer(r.normal(0, 1, (2, 3, 3, 3)), r.normal(0, 1, 2))
    x = r.normal(0, 1, (2, 3, 4, 5))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    oracle = np.zeros((2, 2, 4, 5))
    for n in range(2):
        for f in range(2):
            for i in range(4):
                for j in range(5):
                    s = np.sum(xp[n, :, i:i + 3, j:j + 3] * layer.filters[f]) + layer.biases[f]
                    oracle[n, f, i, j] = max(s, 0.0)
    np.testing.assert_allclose(conv_forward(layer, x), oracle, rtol=0, atol=1e-12)


def test_conv_zero_image_and_channel_mismatch():
    layer = ConvLayer.init(SeededRng(6), 2, 3)
    assert np.array_equal(conv_forward(layer, np.zeros((1, 2, 4, 4))), np.zeros((1, 3, 4, 4)))
    with pytest.raises(DimensionError):
        conv_forward(layer, np.zeros((1, 3, 4, 4)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(0, 2**31))
def test_positive_homogeneity(c, seed):
    r = SeededRng(seed)
    dense = DenseLayer(r.normal(0, 1, (4, 3)), np.zeros(4))
    x = r.normal(0, 1, (5, 3))
    np.testing.assert_allclose(dense_forward(dense, c * x), c * dense_forward(dense, x), rtol=1e-12, atol=1e-12)
    conv = ConvLayer(r.normal(0, 1, (2, 1, 3, 3)), np.zeros(2))
    img = r.normal(0, 1, (2, 1, 4, 4))
    np.testing.assert_allclose(conv_forward(conv, c * img), c * conv_forward(conv, img), rtol=1e-12, atol=1e-12)


# -- pooling -------------------------------------------------------------

def test_maxpool_cases():
    assert maxpool_2x2(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])).tolist() == [[[[4.0]]]]
    assert np.array_equal(maxpool_2x2(np.full((1, 2, 6, 4), 0.25)), np.full((1, 2, 3, 2), 0.25))
    assert maxpool_2x2(np.zeros((1, 1, 7, 5))).shape == (1, 1, 3, 2)
    with pytest.raises(DimensionError):
        maxpool_2x2(np.zeros((1, 1, 1, 4)))


def test_maxpool_matches_window_scan():
    x = SeededRng(7).normal(0, 1, (1, 1, 6, 6))
    oracle = np.array([[max(x[0, 0, 2 * i + a, 2 * j + b] for a in (0, 1) for b in (0, 1))
                        for j in range(3)] for i in range(3)])
    assert np.array_equal(maxpool_2x2(x)[0, 0], oracle)


# -- dropout -------------------------------------------------------------

def test_dropout_identity_cases():
    x = SeededRng(8).normal(0, 1, (3, 4))
    out, mask = dropout_forward(x, DropoutSpec(0.0), SeededRng(0), "train")
    assert np.array_equal(out, x) and np.array_equal(mask, np.ones_like(x))
    out, _ = dropout_forward(x, DropoutSpec(0.6), None, "eval")
    assert np.array_equal(out, x)
    with pytest.raises(DomainError):
        dropout_forward(x, DropoutSpec(0.5), None, "test")


def test_dropout_statistics():
    x = SeededRng(9).random(100_000) + 0.5
    out, mask = dropout_forward(x, DropoutSpec(0.3), SeededRng(10), "train")
    assert abs(mask.mean() - 0.7) < 0.01
    assert abs(out.mean() - x.mean()) < 0.01 * x.mean()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.95), st.integers(0, 2**31))
def test_dropout_is_masked_rescale(rate, seed):
    x = SeededRng(seed).normal(0, 1, (6, 7))
    out, mask = dropout_forward(x, DropoutSpec(rate), SeededRng(seed + 1), "train")
    assert set(np.unique(mask)) <= {0.0, 1.0}
    assert np.array_equal(out, x * mask / (1.0 - rate))


# -- softmax -------------------------------------------------------------

def test_softmax_cases():
    assert np.allclose(softmax(np.zeros((2, 4))), 0.25, atol=0)
    p = softmax(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(p)) and p[0, 0] == 1.0 and p[0, 1] < 1e-300
    r = SeededRng(11)
    z = r.normal(0, 3, (5, 6))
    e = np.exp(z)
    np.testing.assert_allclose(softmax(z), e / e.sum(axis=1, keepdims=True), rtol=0, atol=1e-12)


def test_softmax_forward_width_check():
    head = OutputHead.init(SeededRng(0), 4, 3)
    with pytest.raises(DimensionError):
        softmax_forward(head, np.zeros((2, 5)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(2, 12), st.floats(0.1, 50.0), st.integers(0, 2**31))
def test_softmax_rows_are_simplex(n, k, scale, seed):
    p = softmax(SeededRng(seed).normal(0, scale, (n, k)))
    assert np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(p >= 0)
    if scale <= 20:
        assert np.all(p > 0)
