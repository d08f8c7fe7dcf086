"""Dense numeric primitives for the small training engine.

Convolutions run via im2col + matmul. The padding fill value is explicit:
binary-mode convs pad with -1 (matching the bit-packed kernels' convention),
real-mode convs pad with 0.
"""

from __future__ import annotations

import numpy as np


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Strided view (N, C, k, k, H_out, W_out) over a padded input."""
    n, c, h, w = x.shape
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x, shape=(n, c, k, k, h_out, w_out),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride), writeable=False)


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                   pad_value: float, groups: int = 1):
    """x: (N, C_in, H, W); w: (C_out, C_in/g, k, k).

    Returns (out (N, C_out, H', W'), cache for backward).
    """
    n, c_in, h, wd = x.shape
    c_out, c_in_g, k, _ = w.shape
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)),
                    constant_values=pad_value)
    else:
        xp = x
    h_out = (xp.shape[2] - k) // stride + 1
    w_out = (xp.shape[3] - k) // stride + 1
    c_out_g = c_out // groups

    out = np.empty((n, c_out, h_out, w_out), dtype=x.dtype)
    cols_all = []
    for g in range(groups):
        xg = xp[:, g * c_in_g:(g + 1) * c_in_g]
        cols = _windows(xg, k, stride).reshape(n, c_in_g * k * k,
                                               h_out * w_out)
        cols = np.ascontiguousarray(cols)
        wmat = w[g * c_out_g:(g + 1) * c_out_g].reshape(c_out_g, -1)
        out[:, g * c_out_g:(g + 1) * c_out_g] = (
            wmat @ cols).reshape(n, c_out_g, h_out, w_out)
        cols_all.append(cols)
    cache = (cols_all, x.shape, w.shape, stride, padding, groups,
             (h_out, w_out))
    return out, cache


def conv2d_backward(dout: np.ndarray, w: np.ndarray, cache):
    """Gradients w.r.t. input and weights. Padding contributions to dx are
    discarded (the fill value is a constant, not a variable)."""
    cols_all, x_shape, w_shape, stride, padding, groups, (h_out, w_out) = cache
    n, c_in, h, wd = x_shape
    c_out, c_in_g, k, _ = w_shape
    c_out_g = c_out // groups

    dw = np.empty_like(w)
    dxp = np.zeros((n, c_in, h + 2 * padding, wd + 2 * padding),
                   dtype=dout.dtype)
    for g in range(groups):
        dg = dout[:, g * c_out_g:(g + 1) * c_out_g].reshape(
            n, c_out_g, h_out * w_out)
        cols = cols_all[g]
        wmat = w[g * c_out_g:(g + 1) * c_out_g].reshape(c_out_g, -1)
        dw[g * c_out_g:(g + 1) * c_out_g] = (
            np.einsum("nol,ncl->oc", dg, cols, optimize=True)
            .reshape(c_out_g, c_in_g, k, k))
        dcols = np.einsum("oc,nol->ncl", wmat, dg, optimize=True).reshape(
            n, c_in_g, k, k, h_out, w_out)
        tgt = dxp[:, g * c_in_g:(g + 1) * c_in_g]
        for dy in range(k):
            for dx in range(k):
                tgt[:, :, dy:dy + h_out * stride:stride,
                    dx:dx + w_out * stride:stride] += dcols[:, :, dy, dx]
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dw


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      training: bool, momentum: float = 0.1,
                      eps: float = 1e-5):
    """Per-channel batch norm over (N, C, H, W); updates running stats
    in place when training."""
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= (1 - momentum)
        running_mean += momentum * mean
        running_var *= (1 - momentum)
        running_var += momentum * var
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    cache = (xhat, inv, gamma, training)
    return out, cache


def batchnorm_backward(dout: np.ndarray, cache):
    xhat, inv, gamma, training = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    if training:
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        dxhat = dout * gamma[None, :, None, None]
        dx = (inv[None, :, None, None] / m) * (
            m * dxhat
            - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
            - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
    else:
        dx = dout * (gamma * inv)[None, :, None, None]
    return dx, dgamma, dbeta
