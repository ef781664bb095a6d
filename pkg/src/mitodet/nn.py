"""Minimal NHWC conv-net layers with explicit forward caches and backprop.

Convolutions are 3x3 with one pixel of zero padding on every side, expressed
as nine shifted GEMMs: on small channel counts this is substantially faster
than an im2col matrix and its backward needs no col2im scatter. All reductions
use a fixed accumulation order, so results are bit-reproducible and window
extent never changes the value computed for a given output cell.
"""
from __future__ import annotations

import numpy as np

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _conv_out(size: int, stride: int) -> int:
    # pad 1, kernel 3: out = floor((size - 1) / stride) + 1
    return (size - 1) // stride + 1


def _row_windows(xp: np.ndarray, ki: int, ho: int, wo: int, stride: int) -> np.ndarray:
    """Contiguous (N, Ho, Wo, 3, Cin) view of kernel row ki's input windows."""
    n = xp.shape[0]
    cin = xp.shape[3]
    sn, sh, sw, sc = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp[:, ki:, :, :],
        (n, ho, wo, 3, cin),
        (sn, sh * stride, sw * stride, sw, sc),
        writeable=False)
    return np.ascontiguousarray(view).reshape(n * ho * wo, 3 * cin)


def conv3x3_forward(x: np.ndarray, w: np.ndarray, stride: int):
    """x: (N, H, W, Cin); w: (Cout, 3, 3, Cin) -> (N, Ho, Wo, Cout).

    One GEMM per kernel row: K = 3*Cin keeps BLAS efficient at small widths.
    """
    n, h, wd, cin = x.shape
    cout = w.shape[0]
    ho, wo = _conv_out(h, stride), _conv_out(wd, stride)
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    y = np.zeros((n * ho * wo, cout), dtype=x.dtype)
    for ki in range(3):
        y += _row_windows(xp, ki, ho, wo, stride) @ w[:, ki, :, :].reshape(cout, 3 * cin).T
    out = y.reshape(n, ho, wo, cout)
    return out, (xp, x.shape, w, stride)


def conv3x3_backward(dy: np.ndarray, cache):
    xp, x_shape, w, stride = cache
    n, h, wd, cin = x_shape
    cout = w.shape[0]
    ho, wo = dy.shape[1], dy.shape[2]
    dy2 = dy.reshape(-1, cout)
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp)
    for ki in range(3):
        wk = w[:, ki, :, :].reshape(cout, 3 * cin)
        dw[:, ki, :, :] = (dy2.T @ _row_windows(xp, ki, ho, wo, stride)).reshape(cout, 3, cin)
        dcols = (dy2 @ wk).reshape(n, ho, wo, 3, cin)
        rows = slice(ki, ki + (ho - 1) * stride + 1, stride)
        for kj in range(3):
            cols = slice(kj, kj + (wo - 1) * stride + 1, stride)
            dxp[:, rows, cols, :] += dcols[:, :, :, kj, :]
    dx = dxp[:, 1:1 + h, 1:1 + wd, :]
    return dx, dw


def conv1x1_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """x: (N, H, W, Cin); w: (Cout, 1, 1, Cin); b: (Cout,)."""
    cin = x.shape[-1]
    cout = w.shape[0]
    y = x.reshape(-1, cin) @ w.reshape(cout, cin).T + b
    return y.reshape(*x.shape[:3], cout), (x, w)


def conv1x1_backward(dy: np.ndarray, cache):
    x, w = cache
    cin, cout = x.shape[-1], w.shape[0]
    dy2 = dy.reshape(-1, cout)
    dw = (dy2.T @ x.reshape(-1, cin)).reshape(w.shape)
    db = dy2.sum(axis=0)
    dx = (dy2 @ w.reshape(cout, cin)).reshape(x.shape)
    return dx, dw, db


def batchnorm_forward(x, gamma, beta, rmean, rvar, train: bool):
    """Per-channel normalization; training mode also returns updated running stats."""
    if train:
        flat = x.reshape(-1, x.shape[-1])
        mean = flat.mean(axis=0)
        xc = x - mean
        var = np.einsum("nhwc,nhwc->c", xc, xc) / flat.shape[0]
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        xhat = xc
        xhat *= inv_std
        out = gamma * xhat + beta
        new_rmean = BN_MOMENTUM * rmean + (1.0 - BN_MOMENTUM) * mean
        new_rvar = BN_MOMENTUM * rvar + (1.0 - BN_MOMENTUM) * var
        cache = (xhat, inv_std, gamma)
        return out, cache, (new_rmean, new_rvar)
    scale = gamma / np.sqrt(rvar + BN_EPS)
    out = x * scale + (beta - rmean * scale)
    return out, None, None


def batchnorm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    m = dy.shape[0] * dy.shape[1] * dy.shape[2]
    dgamma = np.einsum("nhwc,nhwc->c", dy, xhat)
    dbeta = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    # dx = (gamma*inv/m) * (m*dy - sum(dy) - xhat*sum(dy*xhat)), per channel
    a = gamma * inv_std
    dx = dy * a
    dx -= xhat * ((a / m) * dgamma)
    dx -= (a / m) * dbeta
    return dx, dgamma, dbeta


def relu_forward(x):
    out = np.maximum(x, 0)
    return out, out


def relu_backward(dy, out):
    return dy * (out > 0)


def shortcut_forward(x: np.ndarray, stride: int, out_channels: int):
    """Parameter-free residual shortcut: stride subsampling + zero channel pad."""
    y = x[:, ::stride, ::stride, :]
    cin = x.shape[-1]
    if out_channels != cin:
        pad = np.zeros((*y.shape[:3], out_channels - cin), dtype=x.dtype)
        y = np.concatenate([y, pad], axis=-1)
    return y, (x.shape, stride, cin)


def shortcut_backward(dy: np.ndarray, cache):
    x_shape, stride, cin = cache
    dx = np.zeros(x_shape, dtype=dy.dtype)
    dx[:, ::stride, ::stride, :] = dy[..., :cin]
    return dx


def avgpool_forward(x: np.ndarray, k: int):
    """Valid k x k mean pooling at stride 1, separable with fixed add order."""
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    rows = x[:, 0:ho, :, :].copy()
    for d in range(1, k):
        rows += x[:, d:d + ho, :, :]
    out = rows[:, :, 0:wo, :].copy()
    for d in range(1, k):
        out += rows[:, :, d:d + wo, :]
    out /= np.array(k * k, dtype=x.dtype)
    return out, (x.shape, k)


def avgpool_backward(dy: np.ndarray, cache):
    x_shape, k = cache
    n, h, w, c = x_shape
    ho, wo = dy.shape[1], dy.shape[2]
    g = dy / np.array(k * k, dtype=dy.dtype)
    cols = np.zeros((n, ho, w, c), dtype=dy.dtype)
    for d in range(k):
        cols[:, :, d:d + wo, :] += g
    dx = np.zeros(x_shape, dtype=dy.dtype)
    for d in range(k):
        dx[:, d:d + ho, :, :] += cols
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, dlogits, probs)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    loss = float((log_norm - z[np.arange(n), labels]).mean())
    probs = softmax(logits)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype), probs
