"""Pure numpy implementations of the hot convolution and pooling kernels.

These mirror the compiled ``_ckernels`` extension exactly (same layouts, same
tie-breaking) and are used whenever the extension is unavailable.

Layouts
-------
im2col returns a ``(n, Ho, Wo, C*K*K)`` array whose last axis is ordered
``(c, ki, kj)``, so that ``cols.reshape(-1, C*K*K) @ W.reshape(F, -1).T`` is
the convolution output in ``(n, Ho, Wo, F)`` order.

Max pooling returns the pooled map and an ``int32`` array holding, for every
output element, the flat offset ``ki*k + kj`` of the winning element inside
its window (first occurrence on ties).
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_extent(size, k, dilation, stride, pad):
    span = dilation * (k - 1) + 1
    return (size + 2 * pad - span) // stride + 1


def im2col(x, k, dilation=1, stride=1, pad=0, out=None):
    n, c, h, w = x.shape
    ho = out_extent(h, k, dilation, stride, pad)
    wo = out_extent(w, k, dilation, stride, pad)
    span = dilation * (k - 1) + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (span, span), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride,
              ::dilation, ::dilation]
    # (n, c, ho, wo, k, k) -> (n, ho, wo, c, k, k)
    win = win.transpose(0, 2, 3, 1, 4, 5)
    shape = (n, ho, wo, c * k * k)
    if out is not None and out.shape == shape and out.dtype == x.dtype:
        out.reshape(n, ho, wo, c, k, k)[...] = win
        return out
    return np.ascontiguousarray(win).reshape(shape)


def col2im(cols, x_shape, k, dilation=1, stride=1, pad=0):
    n, c, h, w = x_shape
    ho, wo = cols.shape[1], cols.shape[2]
    cols = cols.reshape(n, ho, wo, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        r0 = ki * dilation
        for kj in range(k):
            c0 = kj * dilation
            dxp[:, :, r0 : r0 + (ho - 1) * stride + 1 : stride,
                c0 : c0 + (wo - 1) * stride + 1 : stride] += cols[..., ki, kj].transpose(0, 3, 1, 2)
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad:-pad, pad:-pad])
    return dxp


def maxpool_forward(x, k, stride, pad=0):
    n, c, h, w = x.shape
    ho = out_extent(h, k, 1, stride, pad)
    wo = out_extent(w, k, 1, stride, pad)
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
    else:
        xp = x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    win = win.reshape(n, c, ho, wo, k * k)
    arg = win.argmax(axis=-1).astype(np.int32)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool_backward(dout, arg, x_shape, k, stride, pad=0):
    n, c, h, w = x_shape
    ho, wo = dout.shape[2], dout.shape[3]
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dout.dtype)
    for off in range(k * k):
        ki, kj = divmod(off, k)
        sel = np.where(arg == off, dout, 0)
        dxp[:, :, ki : ki + (ho - 1) * stride + 1 : stride,
            kj : kj + (wo - 1) * stride + 1 : stride] += sel
    if pad:
        return np.ascontiguousarray(dxp[:, :, pad:-pad, pad:-pad])
    return dxp
