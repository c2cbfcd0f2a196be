"""Forward/backward kernels for the layers used by the VGG classifier.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
consumes ``(dout, cache)``. Image tensors are laid out ``[B, C, H, W]``;
the conv and pool kernels also accept a single unbatched ``[C, H, W]``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when two tensors handed to a kernel have incompatible shapes."""

    def __init__(self, what: str, a: tuple, b: tuple):
        super().__init__(f"{what}: shape {tuple(a)} is incompatible with {tuple(b)}")
        self.shapes = (tuple(a), tuple(b))


def conv_output_size(size: int, kernel: int, pad: int, stride: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def _batched(x):
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError("expected [C,H,W] or [B,C,H,W]", x.shape, ("C", "H", "W"))


# --------------------------------------------------------------------------
# convolution (im2col)
# --------------------------------------------------------------------------

def _im2col(xp, kh, kw, stride, h_out, w_out):
    # xp: padded, channel-major [C, B, Hp, Wp] -> [C*kh*kw, B*h_out*w_out]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    c = xp.shape[0]
    return np.ascontiguousarray(win.transpose(0, 4, 5, 1, 2, 3)).reshape(c * kh * kw, -1)


def conv2d_forward(x, w, b, stride: int = 1, pad: int = 1):
    """Cross-correlate ``x`` with kernels ``w`` ([C_out, C_in, kh, kw]), add ``b``.

    Borders are zero padded. Output spatial size follows
    ``(H + 2*pad - kh) // stride + 1``.
    """
    xb, squeeze = _batched(x)
    if w.ndim != 4 or w.shape[1] != xb.shape[1]:
        raise ShapeError("conv2d kernel/input channels", w.shape, x.shape)
    if b.shape != (w.shape[0],):
        raise ShapeError("conv2d bias/kernel", b.shape, w.shape)
    bsz, c, h, wd = xb.shape
    c_out, _, kh, kw = w.shape
    h_out = conv_output_size(h, kh, pad, stride)
    w_out = conv_output_size(wd, kw, pad, stride)
    if h_out < 1 or w_out < 1:
        raise ShapeError("conv2d kernel larger than padded input", w.shape, x.shape)

    # work channel-major so im2col/col2im copy whole image rows
    xt = xb.transpose(1, 0, 2, 3)
    xp = np.pad(xt, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xt
    cols = _im2col(xp, kh, kw, stride, h_out, w_out)
    out = w.reshape(c_out, -1) @ cols + b[:, None]
    out = np.ascontiguousarray(out.reshape(c_out, bsz, h_out, w_out).transpose(1, 0, 2, 3))
    cache = (xb.shape, cols, w, stride, pad, squeeze)
    return (out[0] if squeeze else out), cache


def conv2d_backward(dout, cache):
    """Return ``(dx, dw, db)`` for :func:`conv2d_forward`."""
    x_shape, cols, w, stride, pad, squeeze = cache
    db_, squeezed = _batched(dout)
    bsz, c, h, wd = x_shape
    c_out, _, kh, kw = w.shape
    h_out, w_out = db_.shape[2:]
    if db_.shape != (bsz, c_out, h_out, w_out) or squeezed != squeeze:
        raise ShapeError("conv2d grad_out/forward output", dout.shape,
                         (bsz, c_out, h_out, w_out))

    dmat = db_.transpose(1, 0, 2, 3).reshape(c_out, -1)
    dw = (dmat @ cols.T).reshape(w.shape)
    db = dmat.sum(axis=1)
    dcols = (w.reshape(c_out, -1).T @ dmat).reshape(c, kh, kw, bsz, h_out, w_out)

    dxp = np.zeros((c, bsz, h + 2 * pad, wd + 2 * pad), dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += dcols[:, i, j]
    dx = dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp
    dx = np.ascontiguousarray(dx.transpose(1, 0, 2, 3))
    return (dx[0] if squeeze else dx), dw, db


# --------------------------------------------------------------------------
# 2x2 max pooling
# --------------------------------------------------------------------------

def maxpool2_forward(x):
    """2x2/stride-2 max pooling.

    Returns ``(out, argmax)`` where ``argmax`` holds, per output cell, the
    row-major index (0..3) of the winning element inside its window. Ties go
    to the first element in scan order.
    """
    xb, squeeze = _batched(x)
    bsz, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise ShapeError("maxpool2 needs even spatial extents", x.shape, ("even", "even"))
    win = xb.reshape(bsz, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(bsz, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    if squeeze:
        return out[0], idx[0]
    return out, idx


def maxpool2_backward(dout, argmax):
    db_, squeeze = _batched(dout)
    idx = argmax[None] if squeeze else argmax
    if idx.shape != db_.shape:
        raise ShapeError("maxpool2 grad_out/argmax", dout.shape, argmax.shape)
    bsz, c, ho, wo = db_.shape
    routed = (np.arange(4) == idx[..., None]) * db_[..., None]
    dx = routed.reshape(bsz, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = dx.reshape(bsz, c, 2 * ho, 2 * wo).astype(dout.dtype, copy=False)
    return dx[0] if squeeze else dx


# --------------------------------------------------------------------------
# dense
# --------------------------------------------------------------------------

def dense_forward(x, w, b):
    """``out = W x + b`` for ``x`` of shape [N] or [B, N], ``w`` [M, N]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[1] or x.ndim not in (1, 2):
        raise ShapeError("dense weight/input", w.shape, x.shape)
    if b.shape != (w.shape[0],):
        raise ShapeError("dense bias/weight", b.shape, w.shape)
    return x @ w.T + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    if dout.shape != x.shape[:-1] + (w.shape[0],):
        raise ShapeError("dense grad_out/forward output", dout.shape,
                         x.shape[:-1] + (w.shape[0],))
    dx = dout @ w
    if x.ndim == 1:
        dw = np.outer(dout, x)
        db = dout.copy()
    else:
        dw = dout.T @ x
        db = dout.sum(axis=0)
    return dx, dw, db


# --------------------------------------------------------------------------
# relu
# --------------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, x):
    # subgradient at exactly 0 is 0
    return dout * (x > 0)


# --------------------------------------------------------------------------
# batch normalization
# --------------------------------------------------------------------------

class BatchNormState:
    """Learned scale/shift plus running statistics for one normalized layer."""

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5,
                 dtype=np.float32):
        if not 0 < momentum <= 1:
            raise ValueError(f"batchnorm momentum must be in (0, 1], got {momentum}")
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def _bn_axes(x):
    if x.ndim < 2:
        raise ShapeError("batchnorm expects [B, C, ...]", x.shape, ("B", "C"))
    shape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    return axes, shape


def batchnorm_forward(x, state: BatchNormState, mode: str = "train"):
    """Normalize per channel over batch (and spatial) axes.

    In ``train`` mode the batch statistics are used and the running
    averages are updated in place; in ``infer`` mode the running averages
    are used.
    """
    axes, shape = _bn_axes(x)
    if state.gamma.shape != (x.shape[1],):
        raise ShapeError("batchnorm channels", state.gamma.shape, x.shape)
    gamma = state.gamma.reshape(shape)
    beta = state.beta.reshape(shape)
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - state.running_mean.reshape(shape)) * inv_std.reshape(shape)
        return gamma * xhat + beta, None
    if mode != "train":
        raise ValueError(f"unknown batchnorm mode {mode!r}")
    if x.shape[0] < 2:
        raise ValueError("batchnorm in train mode needs a batch of at least 2")

    mean = x.mean(axis=axes)
    centered = x - mean.reshape(shape)
    var = (centered * centered).mean(axis=axes)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = centered * inv_std.reshape(shape)

    m = state.momentum
    count = x.size // x.shape[1]
    unbiased = var * (count / max(count - 1, 1))
    state.running_mean[...] = (1 - m) * state.running_mean + m * mean
    state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    return gamma * xhat + beta, (xhat, inv_std, gamma, axes, shape)


def batchnorm_backward(dout, cache):
    """Return ``(dx, dgamma, dbeta)`` for train-mode :func:`batchnorm_forward`."""
    xhat, inv_std, gamma, axes, shape = cache
    if dout.shape != xhat.shape:
        raise ShapeError("batchnorm grad_out/input", dout.shape, xhat.shape)
    dbeta = dout.sum(axis=axes)
    dgamma = (dout * xhat).sum(axis=axes)
    count = dout.size // dout.shape[1]
    dxhat = dout * gamma
    dx = (inv_std / count).reshape(shape) * (
        count * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx.astype(dout.dtype, copy=False), dgamma, dbeta


# --------------------------------------------------------------------------
# dropout
# --------------------------------------------------------------------------

def dropout_forward(x, rate: float, rng: np.random.Generator | None, mode: str = "train"):
    """Inverted dropout. Returns ``(out, mask)``; ``mask`` is None when inactive."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / np.asarray(1 - rate, dtype=x.dtype)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits, labels):
    """Stabilized softmax + negative log-likelihood.

    ``logits`` is [K] with an integer label, or [B, K] with a label vector, in
    which case the loss and gradient are averaged over the batch. Returns
    ``(loss, grad_logits, probabilities)``.
    """
    k = logits.shape[-1]
    lab = np.asarray(labels)
    if lab.shape != logits.shape[:-1]:
        raise ShapeError("cross-entropy labels/logits", lab.shape, logits.shape)
    if lab.size and (lab.min() < 0 or lab.max() >= k):
        raise ValueError(f"label out of range 0..{k - 1}: {labels}")

    z = logits - logits.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    p = np.exp(log_p)
    onehot = (np.arange(k) == lab[..., None]).astype(logits.dtype)
    if logits.ndim == 1:
        loss = -log_p[int(lab)]
        grad = p - onehot
    else:
        n = logits.shape[0]
        loss = -np.take_along_axis(log_p, lab[:, None], axis=1).mean()
        grad = (p - onehot) / np.asarray(n, dtype=logits.dtype)
    return float(loss), grad, p
