"""Forward examples and finite-difference checks for every primitive (float64)."""

import math

import numpy as np
import pytest

from medpose import nn

TOL = 1e-5
H = 1e-5


def check_all(forward, backward, inputs, rng, n_coords=64):
    """Grad-check every input of a primitive against the scalar loss sum(out * R)."""
    out, _ = forward(*inputs)
    R = rng.normal(size=out.shape)
    _, ctx = forward(*inputs)
    grads = backward(ctx, R)
    if not isinstance(grads, tuple):
        grads = (grads,)
    worst = 0.0
    for k, (arr, g) in enumerate(zip(inputs, grads)):
        def f(t, k=k):
            args = list(inputs)
            args[k] = t
            return float(np.sum(forward(*args)[0] * R))
        worst = max(worst, nn.grad_check(f, lambda t, g=g: g, arr, h=H, n_coords=n_coords))
    return worst


# -- grad_check itself --------------------------------------------------------

def test_grad_check_quadratic(rng):
    theta = rng.normal(size=100)
    err = nn.grad_check(lambda t: float(t @ t), lambda t: 2 * t, theta, h=1e-3)
    assert err <= 1e-9


def test_grad_check_linear_layer_loss(rng):
    x = rng.normal(size=(5, 4))
    b = rng.normal(size=3)

    def loss(W):
        return float(np.sum(nn.linear_forward(x, W, b)[0] ** 2))

    def grad(W):
        y, ctx = nn.linear_forward(x, W, b)
        return nn.linear_backward(ctx, 2 * y)[1]

    assert nn.grad_check(loss, grad, rng.normal(size=(3, 4)), h=1e-5) <= 1e-5


def test_grad_check_detects_scaled_gradient(rng):
    theta = rng.normal(size=80)
    err = nn.grad_check(lambda t: float(t @ t), lambda t: 4 * t, theta, h=1e-5)
    # |2a - a| / max(|2a|, |a|)
    assert err == pytest.approx(0.5, abs=1e-6)


def test_grad_check_rejects_bad_step_and_nonfinite(rng):
    with pytest.raises(ValueError):
        nn.grad_check(lambda t: 0.0, lambda t: t, np.zeros(3), h=1e-2)
    with pytest.raises(FloatingPointError):
        nn.grad_check(lambda t: float("nan"), lambda t: t, np.ones(3), h=1e-5)


def test_context_single_use(rng):
    _, ctx = nn.gelu_forward(rng.normal(size=3))
    nn.gelu_backward(ctx, np.ones(3))
    with pytest.raises(RuntimeError):
        nn.gelu_backward(ctx, np.ones(3))


# -- linear -------------------------------------------------------------------

def test_linear_examples():
    y, _ = nn.linear_forward(np.array([1.0, 2.0]), np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(y, [1, 2])
    y, _ = nn.linear_forward(np.array([1.0, 0.0]), np.array([[2.0, 3.0], [4.0, 5.0]]), np.ones(2))
    np.testing.assert_array_equal(y, [3, 5])
    with pytest.raises(ValueError):
        nn.linear_forward(np.ones(3), np.eye(2), np.zeros(2))


@pytest.mark.parametrize("shape", [(4,), (3, 5), (2, 3, 6)])
def test_linear_grad(rng, shape):
    din = shape[-1]
    inputs = (rng.normal(size=shape), rng.normal(size=(3, din)), rng.normal(size=3))
    assert check_all(nn.linear_forward, nn.linear_backward, inputs, rng) <= TOL


# -- layer norm -----------------------------------------------------------------

def test_layer_norm_examples():
    y, _ = nn.layer_norm_forward(np.array([1.0, 3.0]), np.ones(2), np.zeros(2), eps=1e-12)
    np.testing.assert_allclose(y, [-1, 1], atol=1e-9)
    y, _ = nn.layer_norm_forward(np.full(5, 7.0), np.ones(5), np.full(5, 0.25), eps=1e-6)
    np.testing.assert_array_equal(y, np.full(5, 0.25))


@pytest.mark.parametrize("shape", [(6,), (4, 5), (2, 3, 7)])
def test_layer_norm_grad(rng, shape):
    d = shape[-1]
    fwd = lambda x, g, b: nn.layer_norm_forward(x, g, b, 1e-6)  # noqa: E731
    inputs = (rng.normal(size=shape), rng.normal(size=d), rng.normal(size=d))
    assert check_all(fwd, nn.layer_norm_backward, inputs, rng) <= TOL


# -- gelu ---------------------------------------------------------------------------

def test_gelu_values():
    assert nn.gelu_forward(np.array(0.0))[0] == 0
    big = nn.gelu_forward(np.array([10.0, 30.0]))[0]
    np.testing.assert_allclose(big, [10.0, 30.0], rtol=1e-12)
    assert abs(nn.gelu_forward(np.array(-10.0))[0]) < 1e-6


@pytest.mark.parametrize("shape", [(7,), (3, 4), (2, 2, 5)])
def test_gelu_grad(rng, shape):
    assert check_all(nn.gelu_forward, nn.gelu_backward, (rng.normal(size=shape) * 2,), rng) <= TOL


# -- softmax ------------------------------------------------------------------------

def test_softmax_values():
    np.testing.assert_array_equal(nn.softmax_forward(np.zeros(2))[0], [0.5, 0.5])
    y = nn.softmax_forward(np.array([1000.0, 0.0]))[0]
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [1, 0], atol=1e-300)


def test_softmax_rows_sum_to_one(rng):
    for shape in [(3,), (5, 4), (2, 3, 9)]:
        y = nn.softmax_forward(rng.normal(size=shape) * 20)[0]
        assert y.min() >= 0
        np.testing.assert_allclose(y.sum(-1), 1, atol=1e-6)


@pytest.mark.parametrize("shape", [(5,), (3, 4), (2, 3, 6)])
def test_softmax_grad(rng, shape):
    assert check_all(nn.softmax_forward, nn.softmax_backward, (rng.normal(size=shape),), rng) <= TOL


# -- attention --------------------------------------------------------------------

def _attn_params(rng, d):
    return (rng.normal(size=(3 * d, d)), rng.normal(size=3 * d),
            rng.normal(size=(d, d)), rng.normal(size=d))


def test_attention_single_token(rng):
    d = 4
    x = rng.normal(size=(1, d))
    Wqkv, bqkv, Wp, bp = _attn_params(rng, d)
    y, _ = nn.multi_head_attention_forward(x, Wqkv, bqkv, Wp, bp, 2)
    v = x @ Wqkv[2 * d:].T + bqkv[2 * d:]
    np.testing.assert_allclose(y, v @ Wp.T + bp, atol=1e-12)


def test_attention_equal_keys_is_mean_pooling(rng):
    d, T = 4, 5
    x = rng.normal(size=(T, d))
    Wqkv, bqkv, Wp, bp = _attn_params(rng, d)
    Wqkv[d:2 * d] = 0.0              # every key row is the bias -> identical keys
    y, _ = nn.multi_head_attention_forward(x, Wqkv, bqkv, Wp, bp, 2)
    v = x @ Wqkv[2 * d:].T + bqkv[2 * d:]
    expected = np.tile(v.mean(axis=0), (T, 1)) @ Wp.T + bp
    np.testing.assert_allclose(y, expected, atol=1e-12)


def test_attention_divisibility():
    with pytest.raises(ValueError):
        nn.multi_head_attention_forward(np.ones((2, 5)), np.ones((15, 5)), np.ones(15),
                                        np.ones((5, 5)), np.ones(5), 2)


@pytest.mark.parametrize("T, d, heads, lead", [(3, 4, 2, ()), (5, 6, 3, ()), (4, 4, 1, (2,))])
def test_attention_grad(rng, T, d, heads, lead):
    x = rng.normal(size=(*lead, T, d))
    Wqkv, bqkv, Wp, bp = _attn_params(rng, d)
    R = rng.normal(size=x.shape)
    fwd = lambda x, a, b, c, e: nn.multi_head_attention_forward(x, a, b, c, e, heads)  # noqa: E731
    # The key bias shifts every score in a row equally, so softmax makes its gradient
    # exactly zero; a relative check there only measures rounding noise. Check it is ~0
    # and grad-check the query/value bias blocks on their own.
    _, ctx = fwd(x, Wqkv, bqkv, Wp, bp)
    dbqkv = nn.multi_head_attention_backward(ctx, R)[2]
    assert np.abs(dbqkv[d:2 * d]).max() <= 1e-12
    qv = np.r_[0:d, 2 * d:3 * d]

    def f_bias(t):
        b = bqkv.copy()
        b[qv] = t
        return float(np.sum(fwd(x, Wqkv, b, Wp, bp)[0] * R))
    assert nn.grad_check(f_bias, lambda t: dbqkv[qv], bqkv[qv], h=H) <= TOL

    rest = lambda x, a, c, e: fwd(x, a, bqkv, c, e)  # noqa: E731

    def back(ctx, g):
        dx, dW, _, dWp, dbp = nn.multi_head_attention_backward(ctx, g)
        return dx, dW, dWp, dbp
    assert check_all(rest, back, (x, Wqkv, Wp, bp), rng) <= TOL


# -- patch embedding ----------------------------------------------------------------

def test_patch_embed_shapes_and_constant_image():
    img = np.ones((1, 64, 64))
    Wp = np.ones((3, 64))
    tokens, _ = nn.patch_embed_forward(img, Wp, np.zeros(3), 8)
    assert tokens.shape == (64, 3)
    np.testing.assert_array_equal(tokens, np.full((64, 3), 64.0))
    with pytest.raises(ValueError):
        nn.patch_embed_forward(np.ones((1, 10, 10)), np.ones((3, 16)), np.zeros(3), 4)


def test_patch_order_is_row_major(rng):
    img = np.arange(2 * 4 * 6, dtype=float).reshape(2, 4, 6)
    patches = nn.patchify(img, 2)
    # second patch is rows 0-1, columns 2-3, channel-major inside the patch
    np.testing.assert_array_equal(patches[1], img[:, 0:2, 2:4].reshape(-1))
    np.testing.assert_array_equal(nn.unpatchify(patches, 2, 2, 4, 6), img)


@pytest.mark.parametrize("C, Hh, Ww, p", [(1, 8, 8, 4), (3, 4, 6, 2), (2, 6, 3, 3)])
def test_patch_embed_grad(rng, C, Hh, Ww, p):
    fwd = lambda x, W, b: nn.patch_embed_forward(x, W, b, p)  # noqa: E731
    inputs = (rng.normal(size=(C, Hh, Ww)), rng.normal(size=(5, C * p * p)), rng.normal(size=5))
    assert check_all(fwd, nn.patch_embed_backward, inputs, rng) <= TOL


# -- transposed convolution --------------------------------------------------------

def conv_transpose_oracle(x, K, b, stride, pad):
    """Direct scatter summation, one input pixel at a time."""
    Cin, Hh, Ww = x.shape
    _, Cout, k, _ = K.shape
    Ho, Wo = (Hh - 1) * stride - 2 * pad + k, (Ww - 1) * stride - 2 * pad + k
    out = np.zeros((Cout, Ho, Wo)) + b[:, None, None]
    for ci in range(Cin):
        for i in range(Hh):
            for j in range(Ww):
                for co in range(Cout):
                    for ki in range(k):
                        for kj in range(k):
                            r, c = i * stride - pad + ki, j * stride - pad + kj
                            if 0 <= r < Ho and 0 <= c < Wo:
                                out[co, r, c] += x[ci, i, j] * K[ci, co, ki, kj]
    return out


def test_conv_transpose_doubles(rng):
    for Hh, Ww in [(8, 8), (1, 1), (3, 5), (7, 2)]:
        y, _ = nn.conv_transpose2d_forward(rng.normal(size=(2, Hh, Ww)),
                                           rng.normal(size=(2, 3, 4, 4)), np.zeros(3), 2, 1)
        assert y.shape == (3, 2 * Hh, 2 * Ww)


def test_conv_transpose_single_pixel():
    y, _ = nn.conv_transpose2d_forward(np.full((1, 1, 1), 2.5), np.ones((1, 1, 4, 4)), np.zeros(1), 2, 1)
    np.testing.assert_array_equal(y, np.full((1, 2, 2), 2.5))
    np.testing.assert_array_equal(
        y, conv_transpose_oracle(np.full((1, 1, 1), 2.5), np.ones((1, 1, 4, 4)), np.zeros(1), 2, 1))


@pytest.mark.parametrize("k, stride, pad", [(4, 2, 1), (3, 1, 0), (5, 3, 2)])
def test_conv_transpose_matches_oracle(rng, k, stride, pad):
    x = rng.normal(size=(2, 3, 4))
    K = rng.normal(size=(2, 3, k, k))
    b = rng.normal(size=3)
    y, _ = nn.conv_transpose2d_forward(x, K, b, stride, pad)
    np.testing.assert_allclose(y, conv_transpose_oracle(x, K, b, stride, pad), atol=1e-12)


def test_conv_transpose_errors():
    with pytest.raises(ValueError):
        nn.conv_transpose2d_forward(np.ones((1, 2, 2)), np.ones((1, 1, 2, 2)), np.zeros(1), 3, 0)
    with pytest.raises(ValueError):
        nn.conv_transpose2d_forward(np.ones((1, 1, 1)), np.ones((1, 1, 2, 2)), np.zeros(1), 2, 1)


@pytest.mark.parametrize("shape", [(2, 3, 3), (1, 1, 4), (2, 2, 3, 2)])
def test_conv_transpose_grad(rng, shape):
    cin = shape[-3]
    fwd = lambda x, K, b: nn.conv_transpose2d_forward(x, K, b, 2, 1)  # noqa: E731
    inputs = (rng.normal(size=shape), rng.normal(size=(cin, 3, 4, 4)), rng.normal(size=3))
    assert check_all(fwd, nn.conv_transpose2d_backward, inputs, rng) <= TOL


# -- 1x1 convolution ------------------------------------------------------------------

def test_conv1x1_examples(rng):
    x = rng.normal(size=(3, 4, 5))
    np.testing.assert_array_equal(nn.conv1x1_forward(x, np.eye(3), np.zeros(3))[0], x)
    y, _ = nn.conv1x1_forward(x[:2], np.array([[1.0, 1.0]]), np.zeros(1))
    np.testing.assert_allclose(y[0], x[0] + x[1])
    with pytest.raises(ValueError):
        nn.conv1x1_forward(x, np.eye(2), np.zeros(2))


@pytest.mark.parametrize("shape", [(3, 2, 2), (1, 4, 3), (2, 2, 3, 3)])
def test_conv1x1_grad(rng, shape):
    cin = shape[-3]
    inputs = (rng.normal(size=shape), rng.normal(size=(4, cin)), rng.normal(size=4))
    assert check_all(nn.conv1x1_forward, nn.conv1x1_backward, inputs, rng) <= TOL


@pytest.mark.parametrize("shape", [(4, 2, 3), (2, 3, 2, 2), (5, 1, 1)])
def test_channel_norm_grad(rng, shape):
    C = shape[-3]
    fwd = lambda x, g, b: nn.channel_norm_forward(x, g, b, 1e-6)  # noqa: E731
    inputs = (rng.normal(size=shape), rng.normal(size=C), rng.normal(size=C))
    assert check_all(fwd, nn.channel_norm_backward, inputs, rng) <= TOL


def test_forwards_are_deterministic(rng):
    x = rng.normal(size=(2, 8, 4, 4)).astype(np.float32)
    K = rng.normal(size=(8, 4, 4, 4)).astype(np.float32)
    a = nn.conv_transpose2d_forward(x, K, np.zeros(4, np.float32))[0]
    b = nn.conv_transpose2d_forward(x, K, np.zeros(4, np.float32))[0]
    assert a.tobytes() == b.tobytes()
    assert math.isfinite(float(a.sum()))
