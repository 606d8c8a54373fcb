"""Forward/backward pairs for every operator the network needs.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)`` and returns gradients in argument order. Arrays are
NCHW; the dtype of the input is preserved throughout, so running the same
code on float64 arrays gives the high-precision mode used by gradient checks.
"""
from __future__ import annotations

import numpy as np

from ..errors import (
    DegenerateBatchError,
    InsufficientBatchError,
    InvalidLabelError,
    InvalidSpecError,
    ShapeError,
)
from . import kernels


def receptive_field(k: int, d: int) -> int:
    """Span of a single dilated kernel: ``K + (K - 1)(D - 1)``."""
    if k < 1 or d < 1:
        raise InvalidSpecError(f"kernel and dilation must be >= 1, got K={k}, D={d}")
    return k + (k - 1) * (d - 1)


# --- convolution -----------------------------------------------------------

def conv2d_forward(x, w, b, stride=1, pad=0, dilation=1, workspace=None):
    """Dilated cross-correlation via im2col + GEMM.

    ``workspace`` is an optional dict the caller keeps between calls; the
    column buffers are reused from it to avoid re-faulting large allocations
    every step.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects (n, C, H, W), got shape {x.shape}")
    f, c, k, k2 = w.shape
    if k != k2:
        raise ShapeError("only square kernels are supported")
    if x.shape[1] != c:
        raise ShapeError(f"conv2d input has {x.shape[1]} channels, weights expect {c}")
    if stride < 1 or dilation < 1 or pad < 0:
        raise InvalidSpecError("stride and dilation must be >= 1 and pad >= 0")
    ws = {} if workspace is None else workspace
    if k == 1 and stride == 1 and pad == 0:
        return _pointwise_forward(x, w, b)
    cols = kernels.im2col(x, k, dilation, stride, pad, out=ws.get("cols"))
    ws["cols"] = cols
    n, ho, wo, _ = cols.shape
    if ho < 1 or wo < 1:
        raise ShapeError("convolution output would be empty")
    out = cols.reshape(-1, c * k * k) @ w.reshape(f, -1).T
    if b is not None:
        out += b
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))
    return out, (x.shape, cols, w, stride, pad, dilation, b is not None, ws)


def _pointwise_forward(x, w, b):
    # 1x1 convolution as a batched GEMM straight in NCHW; no column buffer needed
    n, c, h, wd = x.shape
    w2 = w.reshape(w.shape[0], c)
    out = np.matmul(w2, x.reshape(n, c, h * wd)).reshape(n, -1, h, wd)
    if b is not None:
        out += b[:, None, None]
    return out, ("pointwise", x, w, b is not None)


def _pointwise_backward(dout, cache, need_input_grad):
    _, x, w, has_bias = cache
    n, c, h, wd = x.shape
    f = w.shape[0]
    d3 = dout.reshape(n, f, h * wd)
    dw = np.einsum("nfp,ncp->fc", d3, x.reshape(n, c, h * wd), optimize=True).reshape(w.shape)
    db = d3.sum(axis=(0, 2)) if has_bias else None
    if not need_input_grad:
        return None, dw, db
    dx = np.matmul(w.reshape(f, c).T, d3).reshape(x.shape)
    return dx, dw, db


def conv2d_backward(dout, cache, need_input_grad=True):
    if cache[0] == "pointwise":
        return _pointwise_backward(dout, cache, need_input_grad)
    x_shape, cols, w, stride, pad, dilation, has_bias, ws = cache
    f, c, k, _ = w.shape
    d2 = np.ascontiguousarray(dout.transpose(0, 2, 3, 1)).reshape(-1, f)
    dw = (cols.reshape(-1, c * k * k).T @ d2).T.reshape(w.shape)
    db = d2.sum(axis=0) if has_bias else None
    if not need_input_grad:
        return None, dw, db
    dcols = ws.get("dcols")
    if dcols is None or dcols.shape != cols.shape or dcols.dtype != cols.dtype:
        dcols = np.empty_like(cols)
        ws["dcols"] = dcols
    np.matmul(d2, w.reshape(f, -1), out=dcols.reshape(-1, c * k * k))
    dx = kernels.col2im(dcols, x_shape, k, dilation, stride, pad)
    return dx, dw, db


# --- batch normalization ---------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, train,
                      momentum=0.1, eps=1e-5):
    """Per-channel batch norm over (n, H, W).

    In training mode the running statistics are updated in place (unbiased
    variance, as is conventional); eval mode only reads them.
    """
    shape = (1, -1) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    if train:
        if x.shape[0] < 2:
            raise DegenerateBatchError("batch norm needs at least 2 samples in training mode")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        m = x.size // x.shape[1]
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / (m - 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out.astype(x.dtype, copy=False), (xhat, inv_std, gamma, train, shape, axes)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train, shape, axes = cache
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if not train:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    m = dout.size // dout.shape[1]
    mean_dxhat = dxhat.sum(axis=axes).reshape(shape) / m
    mean_dxhat_xhat = (dxhat * xhat).sum(axis=axes).reshape(shape) / m
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std.reshape(shape)
    return dx, dgamma, dbeta


# --- elementwise -----------------------------------------------------------

def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def sigmoid(x):
    # two-sided form avoids overflow in exp for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout_forward(x, p, train, rng):
    if not 0 <= p < 1:
        raise InvalidSpecError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x, None
    mask = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def grl_forward(x, lam):
    if lam < 0:
        raise InvalidSpecError("gradient reversal strength must be >= 0")
    return x, lam


def grl_backward(dout, lam):
    return -lam * dout


# --- pooling ---------------------------------------------------------------

def maxpool2d_forward(x, window=2, stride=2, pad=0):
    n, c, h, w = x.shape
    if pad == 0 and ((h - window) % stride or (w - window) % stride):
        raise ShapeError(f"spatial extent {h}x{w} not divisible into {window}/{stride} windows")
    out, arg = kernels.maxpool_forward(x, window, stride, pad)
    return out, (arg, x.shape, window, stride, pad)


def maxpool2d_backward(dout, cache):
    arg, x_shape, window, stride, pad = cache
    return kernels.maxpool_backward(dout, arg, x_shape, window, stride, pad)


def global_maxpool_forward(x):
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    return np.take_along_axis(flat, idx[..., None], axis=2)[..., 0], (idx, x.shape)


def global_maxpool_backward(dout, cache):
    idx, shape = cache
    n, c, h, w = shape
    dx = np.zeros((n, c, h * w), dtype=dout.dtype)
    np.put_along_axis(dx, idx[..., None], dout[..., None], axis=2)
    return dx.reshape(shape)


# --- dense -----------------------------------------------------------------

def linear_forward(x, w, b):
    """``x @ w + b`` with ``w`` of shape (F, G)."""
    if x.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    return x @ w + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


# --- attention -------------------------------------------------------------

def channel_attention_forward(x, w1, b1, w2, b2):
    """Shared MLP over avg- and max-pooled descriptors, sigmoid gate per channel.

    ``w1`` is (C, C/r), ``w2`` is (C/r, C).
    """
    n, c, h, w = x.shape
    if w1.shape[0] != c:
        raise ShapeError(f"channel attention built for {w1.shape[0]} channels, got {c}")
    avg = x.mean(axis=(2, 3))
    mx, mx_cache = global_maxpool_forward(x)
    both = np.concatenate([avg, mx], axis=0)  # run the shared MLP once
    h1, c1 = linear_forward(both, w1, b1)
    a1, m1 = relu_forward(h1)
    h2, c2 = linear_forward(a1, w2, b2)
    logits = h2[:n] + h2[n:]
    gate = sigmoid(logits)
    out = x * gate[:, :, None, None]
    return out, (x, gate, mx_cache, c1, m1, c2)


def channel_attention_backward(dout, cache):
    x, gate, mx_cache, c1, m1, c2 = cache
    n, c, h, w = x.shape
    dx = dout * gate[:, :, None, None]
    dgate = (dout * x).sum(axis=(2, 3))
    dlogits = dgate * gate * (1 - gate)
    dh2 = np.concatenate([dlogits, dlogits], axis=0)
    da1, dw2, db2 = linear_backward(dh2, c2)
    dh1 = relu_backward(da1, m1)
    dboth, dw1, db1 = linear_backward(dh1, c1)
    dx += dboth[:n, :, None, None] / (h * w)
    dx += global_maxpool_backward(dboth[n:], mx_cache)
    return dx, dw1, db1, dw2, db2


def spatial_attention_forward(x, w, b):
    """Channel mean/max maps -> KxK conv (same padding) -> sigmoid gate per position.

    ``w`` is (1, 2, K, K).
    """
    n, c, h, wd = x.shape
    k = w.shape[-1]
    avg = x.mean(axis=1, keepdims=True)
    arg = x.argmax(axis=1)[:, None]
    mx = np.take_along_axis(x, arg, axis=1)
    pooled = np.concatenate([avg, mx], axis=1)
    logits, conv_cache = conv2d_forward(pooled, w, b, stride=1, pad=k // 2)
    gate = sigmoid(logits)
    return x * gate, (x, gate, arg, conv_cache)


def spatial_attention_backward(dout, cache):
    x, gate, arg, conv_cache = cache
    c = x.shape[1]
    dx = dout * gate
    dgate = (dout * x).sum(axis=1, keepdims=True)
    dlogits = dgate * gate * (1 - gate)
    dpooled, dw, db = conv2d_backward(dlogits, conv_cache)
    dx += dpooled[:, :1] / c
    np.put_along_axis(dx, arg, np.take_along_axis(dx, arg, axis=1) + dpooled[:, 1:], axis=1)
    return dx, dw, db


# --- losses ----------------------------------------------------------------

def softmax_cross_entropy(logits, labels):
    """Mean cross entropy and its gradient with respect to the logits."""
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n == 0:
        raise InsufficientBatchError("cross entropy over an empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidLabelError(f"labels must lie in [0, {k}), got range "
                                f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1
    return float(loss), grad / n


def supcon_loss(features, labels, tau=0.05):
    """Supervised contrastive loss summed over anchors, and its gradient.

    Rows of ``features`` are L2-normalized first. For every anchor ``i`` the
    loss is the negative mean, over same-label partners ``p``, of the log
    softmax of ``z_i . z_p / tau`` among all other samples. Anchors with no
    same-label partner contribute nothing.
    """
    features = np.asarray(features)
    if not np.issubdtype(features.dtype, np.floating):
        features = features.astype(np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n < 2:
        raise InsufficientBatchError("supervised contrastive loss needs at least 2 samples")
    if tau <= 0:
        raise InvalidSpecError("temperature must be > 0")
    norms = np.sqrt((features * features).sum(axis=1, keepdims=True))
    norms = np.maximum(norms, 1e-12)
    z = features / norms
    sim = z @ z.T / tau
    off_diag = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off_diag
    n_pos = pos.sum(axis=1)
    anchors = n_pos > 0

    masked = np.where(off_diag, sim, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    exp = np.exp(masked - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    log_prob = sim - row_max - np.log(denom)
    safe_npos = np.maximum(n_pos, 1)
    per_anchor = -(np.where(pos, log_prob, 0).sum(axis=1)) / safe_npos
    loss = float(per_anchor[anchors].sum())

    # d loss / d sim_ij = softmax_i(j) - [j in P(i)] / |P(i)|, for anchors only
    g = exp / denom - pos / safe_npos[:, None]
    g[~anchors] = 0
    dz = (g + g.T) @ z / tau
    dfeat = (dz - z * (z * dz).sum(axis=1, keepdims=True)) / norms
    # the integer positive counts promote to float64; hand back the caller's precision
    return loss, dfeat.astype(features.dtype, copy=False)
