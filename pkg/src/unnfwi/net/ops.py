"""Tensor primitives with explicit reverse-mode rules.

Every primitive is a pair ``f(...) -> (out, cache)`` and
``f_backward(cache, dout) -> grads``. Feature maps are single images laid
out as ``(channels, height, width)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LEAKY_SLOPE = 0.01
NORM_EPS = 1e-5


def conv2d(x, w, b):
    """Stride-1 'same' convolution (cross-correlation) with zero padding.

    ``x``: (C_in, H, W); ``w``: (C_out, C_in, k, k) with odd ``k``; ``b``: (C_out,).
    """
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    cols = sliding_window_view(xp, (k, k), axis=(1, 2))  # (C_in, H, W, k, k)
    out = np.tensordot(w, cols, axes=([1, 2, 3], [0, 3, 4])) + b[:, None, None]
    return out, (x, w)


def conv2d_backward(cache, dout):
    x, w = cache
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    cols = sliding_window_view(xp, (k, k), axis=(1, 2))
    dw = np.tensordot(dout, cols, axes=([1, 2], [1, 2]))  # (C_out, C_in, k, k)
    db = dout.sum(axis=(1, 2))
    # input gradient: full correlation of dout with the flipped, transposed kernel
    wf = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx, _ = conv2d(dout, wf, np.zeros(wf.shape[0]))
    return dx, dw, db


def channel_norm(x, gamma, beta, eps=NORM_EPS):
    """Per-channel normalisation over the spatial axes with a learned affine."""
    mu = x.mean(axis=(1, 2), keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma[:, None, None] * xhat + beta[:, None, None]
    return out, (xhat, inv, gamma)


def channel_norm_backward(cache, dout):
    xhat, inv, gamma = cache
    dgamma = (dout * xhat).sum(axis=(1, 2))
    dbeta = dout.sum(axis=(1, 2))
    dxhat = dout * gamma[:, None, None]
    dx = inv * (
        dxhat
        - dxhat.mean(axis=(1, 2), keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
    )
    return dx, dgamma, dbeta


def leaky_relu(x, slope=LEAKY_SLOPE):
    pos = x > 0
    return np.where(pos, x, slope * x), (pos, slope)


def leaky_relu_backward(cache, dout):
    pos, slope = cache
    return np.where(pos, dout, slope * dout)


def maxpool2(x):
    """2x2 max-pool, stride 2. Ties go to the first maximum in row-major order."""
    c, h, w = x.shape
    blocks = x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (arg, x.shape)


def maxpool2_backward(cache, dout):
    arg, shape = cache
    c, h, w = shape
    blocks = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(blocks, arg[..., None], dout[..., None], axis=-1)
    return blocks.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(shape)


def _upsample_matrix(n: int) -> np.ndarray:
    """``(2n, n)`` bilinear interpolation matrix, half-pixel centres (align_corners=False)."""
    src = (np.arange(2 * n) + 0.5) / 2 - 0.5
    src = np.clip(src, 0, None)
    i0 = np.minimum(np.floor(src).astype(int), n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    lam = src - i0
    u = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    np.add.at(u, (rows, i0), 1 - lam)
    np.add.at(u, (rows, i1), lam)
    return u


def upsample2(x):
    """Bilinear 2x upsampling."""
    _, h, w = x.shape
    uh, uw = _upsample_matrix(h), _upsample_matrix(w)
    out = np.einsum("ph,chw,qw->cpq", uh, x, uw, optimize=True)
    return out, (uh, uw)


def upsample2_backward(cache, dout):
    uh, uw = cache
    return np.einsum("ph,cpq,qw->chw", uh, dout, uw, optimize=True)


def concat(a, b):
    return np.concatenate([a, b], axis=0), a.shape[0]


def concat_backward(cache, dout):
    n = cache
    return dout[:n], dout[n:]


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out, out


def sigmoid_backward(cache, dout):
    s = cache
    return dout * s * (1.0 - s)
