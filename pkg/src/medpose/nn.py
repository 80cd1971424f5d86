"""Differentiable numpy primitives with hand-written backward maps.

Every ``*_forward`` returns ``(output, ctx)``; the matching ``*_backward``
takes ``(ctx, upstream_grad)`` and returns gradients for each input and
parameter in argument order. Arrays keep the dtype they were given, so the
same code runs in float32 for training and float64 for gradient checks.
"""

from __future__ import annotations

import math

import numpy as np


class Context:
    """Saved activations for one primitive call; backward may consume it once."""

    __slots__ = ("op", "saved", "spent")

    def __init__(self, op: str, *saved):
        self.op = op
        self.saved = saved
        self.spent = False

    def release(self):
        if self.spent:
            raise RuntimeError(f"backward already called for this {self.op} context")
        self.spent = True
        saved, self.saved = self.saved, ()
        return saved


def _flat(x):
    return x.reshape(-1, x.shape[-1])


# -- linear -----------------------------------------------------------------

def linear_forward(x, W, b):
    if x.shape[-1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"linear: x {x.shape}, W {W.shape}, b {b.shape} do not agree")
    y = x @ W.T + b
    return y, Context("linear", x, W)


def linear_backward(ctx, g, param_grads=True):
    x, W = ctx.release()
    dx = g @ W
    if not param_grads:
        return dx, None, None
    g2 = _flat(g)
    dW = g2.T @ _flat(x)
    db = g2.sum(axis=0)
    return dx, dW, db


# -- layer norm -------------------------------------------------------------

def layer_norm_forward(x, gamma, beta, eps=1e-6):
    if not eps > 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, Context("layer_norm", xhat, rstd, gamma)


def layer_norm_backward(ctx, g, param_grads=True):
    xhat, rstd, gamma = ctx.release()
    d = xhat.shape[-1]
    dxhat = g * gamma
    dx = rstd / d * (d * dxhat
                     - dxhat.sum(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    if not param_grads:
        return dx, None, None
    dgamma = (_flat(g) * _flat(xhat)).sum(axis=0)
    dbeta = _flat(g).sum(axis=0)
    return dx, dgamma, dbeta


# -- gelu -------------------------------------------------------------------

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


def gelu_forward(x):
    t = np.tanh(_GELU_K * (x + _GELU_C * (x * x * x)))
    return 0.5 * x * (1.0 + t), Context("gelu", x, t)


def gelu_backward(ctx, g):
    x, t = ctx.release()
    dt = (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * x * x)
    return g * (0.5 * (1.0 + t) + 0.5 * x * dt)


# -- softmax ----------------------------------------------------------------

def softmax_forward(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, Context("softmax", y)


def softmax_backward(ctx, g):
    (y,) = ctx.release()
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


# -- multi-head attention ---------------------------------------------------

def multi_head_attention_forward(x, Wqkv, bqkv, Wproj, bproj, heads):
    """Scaled dot-product self-attention over x[..., T, d]."""
    d = x.shape[-1]
    if d % heads:
        raise ValueError(f"embed dim {d} not divisible by {heads} heads")
    if Wqkv.shape != (3 * d, d) or Wproj.shape != (d, d):
        raise ValueError(f"attention weights {Wqkv.shape}, {Wproj.shape} do not match dim {d}")
    dh = d // heads
    lead, T = x.shape[:-2], x.shape[-2]
    qkv, c_qkv = linear_forward(x, Wqkv, bqkv)
    # (..., T, 3, h, dh) -> (3, ..., h, T, dh)
    qkv = qkv.reshape(*lead, T, 3, heads, dh)
    qkv = np.moveaxis(qkv, (-3, -2), (0, -3))
    q, k, v = qkv[0], qkv[1], qkv[2]
    scale = 1.0 / math.sqrt(dh)
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    attn, c_soft = softmax_forward(scores)
    o = attn @ v                                            # (..., h, T, dh)
    merged = np.moveaxis(o, -3, -2).reshape(*lead, T, d)
    y, c_proj = linear_forward(merged, Wproj, bproj)
    return y, Context("multi_head_attention", c_qkv, c_soft, c_proj, q, k, v, attn, scale, heads)


def multi_head_attention_backward(ctx, g, param_grads=True):
    c_qkv, c_soft, c_proj, q, k, v, attn, scale, heads = ctx.release()
    dmerged, dWproj, dbproj = linear_backward(c_proj, g, param_grads)
    lead, T, d = dmerged.shape[:-2], dmerged.shape[-2], dmerged.shape[-1]
    dh = d // heads
    do = np.moveaxis(dmerged.reshape(*lead, T, heads, dh), -2, -3)
    dattn = do @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn, -1, -2) @ do
    dscores = softmax_backward(c_soft, dattn) * scale
    dq = dscores @ k
    dk = np.swapaxes(dscores, -1, -2) @ q
    dqkv = np.stack([dq, dk, dv])                           # (3, ..., h, T, dh)
    dqkv = np.moveaxis(dqkv, (0, -3), (-3, -2)).reshape(*lead, T, 3 * d)
    dx, dWqkv, dbqkv = linear_backward(c_qkv, dqkv, param_grads)
    return dx, dWqkv, dbqkv, dWproj, dbproj


# -- patch embedding --------------------------------------------------------

def patchify(img, p):
    *lead, C, H, W = img.shape
    if H % p or W % p:
        raise ValueError(f"patch size {p} does not divide image {H}x{W}")
    gh, gw = H // p, W // p
    x = img.reshape(*lead, C, gh, p, gw, p)
    nl = len(lead)
    # -> (..., gh, gw, C, p, p)
    x = x.transpose(*range(nl), nl + 1, nl + 3, nl, nl + 2, nl + 4)
    return x.reshape(*lead, gh * gw, C * p * p)


def unpatchify(patches, p, C, H, W):
    lead = patches.shape[:-2]
    gh, gw = H // p, W // p
    nl = len(lead)
    x = patches.reshape(*lead, gh, gw, C, p, p)
    x = x.transpose(*range(nl), nl + 2, nl, nl + 3, nl + 1, nl + 4)
    return x.reshape(*lead, C, H, W)


def patch_embed_forward(img, Wp, bp, p):
    C, H, W = img.shape[-3:]
    if Wp.shape[1] != C * p * p:
        raise ValueError(f"patch weight {Wp.shape} expects {C * p * p} inputs")
    tokens, c_lin = linear_forward(patchify(img, p), Wp, bp)
    return tokens, Context("patch_embed", c_lin, p, C, H, W)


def patch_embed_backward(ctx, g, param_grads=True, input_grad=True):
    c_lin, p, C, H, W = ctx.release()
    dpatch, dWp, dbp = linear_backward(c_lin, g, param_grads)
    dimg = unpatchify(dpatch, p, C, H, W) if input_grad else None
    return dimg, dWp, dbp


# -- transposed convolution -------------------------------------------------

def conv_transpose_output_size(n, k, stride, pad):
    return (n - 1) * stride - 2 * pad + k


def conv_transpose2d_forward(x, K, b, stride=2, pad=1):
    """x[(B,) Cin, H, W], K[Cin, Cout, k, k] -> y[(B,) Cout, H', W']."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    B, Cin, H, W = x.shape
    cin_k, Cout, k, k2 = K.shape
    if cin_k != Cin or k != k2:
        raise ValueError(f"kernel {K.shape} does not match input channels {Cin}")
    if k < stride:
        raise ValueError(f"kernel size {k} smaller than stride {stride}")
    Ho = conv_transpose_output_size(H, k, stride, pad)
    Wo = conv_transpose_output_size(W, k, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"transposed conv output would be {Ho}x{Wo}")
    Hf, Wf = (H - 1) * stride + k, (W - 1) * stride + k
    cols = K.reshape(Cin, Cout * k * k).T @ x.reshape(B, Cin, H * W)
    cols = cols.reshape(B, Cout, k, k, H, W)
    full = np.zeros((B, Cout, Hf, Wf), dtype=np.result_type(x, K))
    hs, ws = stride * (H - 1) + 1, stride * (W - 1) + 1
    for ki in range(k):
        for kj in range(k):
            full[:, :, ki:ki + hs:stride, kj:kj + ws:stride] += cols[:, :, ki, kj]
    y = full[:, :, pad:pad + Ho, pad:pad + Wo] + b[:, None, None]
    if squeeze:
        y = y[0]
    return y, Context("conv_transpose2d", x, K, stride, pad, squeeze)


def conv_transpose2d_backward(ctx, g, param_grads=True):
    x, K, stride, pad, squeeze = ctx.release()
    if squeeze:
        g = g[None]
    B, Cin, H, W = x.shape
    _, Cout, k, _ = K.shape
    Hf, Wf = (H - 1) * stride + k, (W - 1) * stride + k
    full = np.zeros((B, Cout, Hf, Wf), dtype=g.dtype)
    full[:, :, pad:pad + g.shape[2], pad:pad + g.shape[3]] = g
    hs, ws = stride * (H - 1) + 1, stride * (W - 1) + 1
    gcols = np.empty((B, Cout, k, k, H, W), dtype=g.dtype)
    for ki in range(k):
        for kj in range(k):
            gcols[:, :, ki, kj] = full[:, :, ki:ki + hs:stride, kj:kj + ws:stride]
    gcols = gcols.reshape(B, Cout * k * k, H * W)
    Kf = K.reshape(Cin, Cout * k * k)
    dx = (Kf @ gcols).reshape(B, Cin, H, W)
    if squeeze:
        dx = dx[0]
    if not param_grads:
        return dx, None, None
    xs = x.reshape(B, Cin, H * W).transpose(1, 0, 2).reshape(Cin, B * H * W)
    gs = gcols.transpose(1, 0, 2).reshape(Cout * k * k, B * H * W)
    dK = (xs @ gs.T).reshape(K.shape)
    db = g.sum(axis=(0, 2, 3))
    return dx, dK, db


# -- 1x1 convolution --------------------------------------------------------

def conv1x1_forward(x, K, b):
    """x[(B,) Cin, H, W], K[Cout, Cin] -> y[(B,) Cout, H, W]."""
    Cin, H, W = x.shape[-3:]
    if K.shape[1] != Cin or b.shape != (K.shape[0],):
        raise ValueError(f"conv1x1: kernel {K.shape} does not match {Cin} input channels")
    flat = x.reshape(*x.shape[:-3], Cin, H * W)
    y = (K @ flat).reshape(*x.shape[:-3], K.shape[0], H, W) + b[:, None, None]
    return y, Context("conv1x1", x, K)


def conv1x1_backward(ctx, g, param_grads=True):
    x, K = ctx.release()
    Cin, H, W = x.shape[-3:]
    Cout = K.shape[0]
    gf = g.reshape(-1, Cout, H * W)
    xf = x.reshape(-1, Cin, H * W)
    dx = (K.T @ gf).reshape(x.shape)
    if not param_grads:
        return dx, None, None
    dK = gf.transpose(1, 0, 2).reshape(Cout, -1) @ xf.transpose(1, 0, 2).reshape(Cin, -1).T
    db = gf.sum(axis=(0, 2))
    return dx, dK, db


# -- channel layer norm (head) ----------------------------------------------

def channel_norm_forward(x, gamma, beta, eps=1e-6):
    """Layer norm over the channel axis of x[(B,) C, H, W]."""
    y, ctx = layer_norm_forward(np.moveaxis(x, -3, -1), gamma, beta, eps)
    return np.moveaxis(y, -1, -3), ctx


def channel_norm_backward(ctx, g, param_grads=True):
    dx, dgamma, dbeta = layer_norm_backward(ctx, np.moveaxis(g, -3, -1), param_grads)
    return np.moveaxis(dx, -1, -3), dgamma, dbeta


# -- verification -----------------------------------------------------------

def grad_check(f, grad, theta, h=1e-6, n_coords=64, seed=0):
    """Max relative error between ``grad(theta)`` and central differences of ``f``.

    Checks a random subset of ``n_coords`` coordinates (all of them if the
    tensor is smaller). Relative error uses max(|a|, |n|, 1e-8) as denominator.
    """
    theta = np.array(theta, dtype=np.float64)
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step {h} outside [1e-7, 1e-3]")
    analytic = np.asarray(grad(theta.copy()), dtype=np.float64)
    if analytic.shape != theta.shape:
        raise ValueError(f"gradient shape {analytic.shape} != parameter shape {theta.shape}")
    if not np.all(np.isfinite(analytic)):
        raise FloatingPointError("analytic gradient has non-finite values")
    rng = np.random.default_rng(seed)
    size = theta.size
    coords = np.arange(size) if size <= n_coords else rng.choice(size, n_coords, replace=False)
    worst = 0.0
    flat = theta.reshape(-1)
    for c in coords:
        old = flat[c]
        flat[c] = old + h
        fp = f(theta)
        flat[c] = old - h
        fm = f(theta)
        flat[c] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {c}")
        num = (fp - fm) / (2 * h)
        a = analytic.reshape(-1)[c]
        err = abs(a - num) / max(abs(a), abs(num), 1e-8)
        worst = max(worst, err)
    return worst
