"""Forward/backward primitives for the convolutional classifier.

All layers operate on NCHW float arrays and return (output, cache); the
matching backward function consumes the upstream gradient and the cache.
Convolution is stride-1 with "same" zero padding, implemented via im2col so
the heavy lifting is one matrix multiply.
"""

from __future__ import annotations

import numpy as np


def _im2col(x: np.ndarray, k: int, pad: int) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, h, w), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(n, c * k * k, h * w)


def _col2im(cols: np.ndarray, shape: tuple, k: int, pad: int) -> np.ndarray:
    n, c, h, w = shape
    cols = cols.reshape(n, c, k, k, h, w)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, :, i:i + h, j:j + w] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w]


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Same-padded stride-1 convolution. x: (N,C,H,W), w: (F,C,k,k), b: (F,)."""
    n, c, h, width = x.shape
    f, _, k, _ = w.shape
    pad = k // 2
    cols = _im2col(x, k, pad)                       # (N, C*k*k, H*W)
    wm = w.reshape(f, -1)
    out = np.einsum("fd,ndp->nfp", wm, cols, optimize=True) + b[None, :, None]
    return out.reshape(n, f, h, width), (x.shape, cols, w)


def conv_backward(dout: np.ndarray, cache):
    x_shape, cols, w = cache
    n, c, h, width = x_shape
    f, _, k, _ = w.shape
    pad = k // 2
    dflat = dout.reshape(n, f, h * width)
    db = dflat.sum(axis=(0, 2))
    dw = np.einsum("nfp,ndp->fd", dflat, cols, optimize=True).reshape(w.shape)
    dcols = np.einsum("fd,nfp->ndp", w.reshape(f, -1), dflat, optimize=True)
    dx = _col2im(dcols, x_shape, k, pad)
    return dx, dw, db


def relu_forward(x: np.ndarray):
    return np.maximum(x, 0), x


def relu_backward(dout: np.ndarray, cache):
    return np.where(cache > 0, dout, 0)


def maxpool_forward(x: np.ndarray, size: int = 2):
    """Non-overlapping max pooling; spatial dims must divide the pool size."""
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ValueError(f"pooling {size} does not divide input {h}x{w}")
    hp, wp = h // size, w // size
    windows = x.reshape(n, c, hp, size, wp, size).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, hp, wp, size * size)
    arg = windows.argmax(axis=-1)  # first maximum wins; deterministic
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, size, arg)


def maxpool_backward(dout: np.ndarray, cache):
    x_shape, size, arg = cache
    n, c, h, w = x_shape
    hp, wp = h // size, w // size
    dwin = np.zeros((n, c, hp, wp, size * size), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(n, c, hp, wp, size, size).transpose(0, 1, 2, 4, 3, 5)
    return dwin.reshape(x_shape)


def global_avgpool_forward(x: np.ndarray):
    return x.mean(axis=(2, 3)), x.shape


def global_avgpool_backward(dout: np.ndarray, cache):
    n, c, h, w = cache
    return np.broadcast_to(dout[:, :, None, None] / (h * w), (n, c, h, w)).astype(dout.dtype, copy=True)


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def fc_backward(dout: np.ndarray, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy of softmax outputs and its gradient w.r.t. logits."""
    n = logits.shape[0]
    probs = softmax(logits)
    eps = np.finfo(logits.dtype).tiny
    loss = -np.log(np.maximum(probs[np.arange(n), labels], eps)).mean()
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    return float(loss), dlogits
