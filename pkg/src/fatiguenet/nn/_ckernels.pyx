# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col/col2im and max-pool kernels.

Same layouts and tie-breaking as ``_kernels_py``; see that module for the
array conventions.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef inline Py_ssize_t _out_extent(Py_ssize_t size, Py_ssize_t k, Py_ssize_t dil,
                                   Py_ssize_t stride, Py_ssize_t pad) nogil:
    return (size + 2 * pad - (dil * (k - 1) + 1)) // stride + 1


cdef inline Py_ssize_t _lo(Py_ssize_t start, Py_ssize_t dil, Py_ssize_t k) nogil:
    # first tap index t with start + t*dil >= 0
    if start >= 0:
        return 0
    return min(k, (-start + dil - 1) // dil)


cdef inline Py_ssize_t _hi(Py_ssize_t start, Py_ssize_t dil, Py_ssize_t k, Py_ssize_t size) nogil:
    # one past the last tap index t with start + t*dil < size
    if start >= size:
        return 0
    return min(k, (size - 1 - start) // dil + 1)


def _im2col(floating[:, :, :, ::1] x, floating[:, :, :, ::1] cols,
            Py_ssize_t k, Py_ssize_t dil, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t ci, ki, kj, b, i, j, r0, q0, ki_lo, ki_hi, kj_lo, kj_hi
    cdef floating* dst
    cdef const floating* xrow
    with nogil:
        for b in range(n):
            for i in range(ho):
                r0 = i * stride - pad
                ki_lo = _lo(r0, dil, k)
                ki_hi = _hi(r0, dil, k, h)
                for j in range(wo):
                    q0 = j * stride - pad
                    kj_lo = _lo(q0, dil, k)
                    kj_hi = _hi(q0, dil, k, w)
                    dst = &cols[b, i, j, 0]
                    for ci in range(c):
                        for ki in range(k):
                            if ki < ki_lo or ki >= ki_hi:
                                for kj in range(k):
                                    dst[kj] = 0
                            else:
                                for kj in range(kj_lo):
                                    dst[kj] = 0
                                xrow = &x[b, ci, r0 + ki * dil, 0] + q0
                                for kj in range(kj_lo, kj_hi):
                                    dst[kj] = xrow[kj * dil]
                                for kj in range(kj_hi, k):
                                    dst[kj] = 0
                            dst += k


def _col2im(floating[:, :, :, ::1] cols, floating[:, :, :, ::1] dx,
            Py_ssize_t k, Py_ssize_t dil, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = dx.shape[0], c = dx.shape[1], h = dx.shape[2], w = dx.shape[3]
    cdef Py_ssize_t ho = cols.shape[1], wo = cols.shape[2]
    cdef Py_ssize_t ci, ki, kj, b, i, j, r0, q0, ki_lo, ki_hi, kj_lo, kj_hi
    cdef floating* src
    cdef floating* drow
    with nogil:
        for b in range(n):
            for i in range(ho):
                r0 = i * stride - pad
                ki_lo = _lo(r0, dil, k)
                ki_hi = _hi(r0, dil, k, h)
                for j in range(wo):
                    q0 = j * stride - pad
                    kj_lo = _lo(q0, dil, k)
                    kj_hi = _hi(q0, dil, k, w)
                    src = &cols[b, i, j, 0]
                    for ci in range(c):
                        for ki in range(ki_lo, ki_hi):
                            drow = &dx[b, ci, r0 + ki * dil, 0] + q0
                            for kj in range(kj_lo, kj_hi):
                                drow[kj * dil] += src[ki * k + kj]
                        src += k * k


def _maxpool2x2_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] out, int[:, :, :, ::1] arg):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t b, ci, i, j
    cdef floating v0, v1, v2, v3, best
    cdef int off
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        v0 = x[b, ci, 2 * i, 2 * j]
                        v1 = x[b, ci, 2 * i, 2 * j + 1]
                        v2 = x[b, ci, 2 * i + 1, 2 * j]
                        v3 = x[b, ci, 2 * i + 1, 2 * j + 1]
                        best = v0
                        off = 0
                        if v1 > best:
                            best = v1
                            off = 1
                        if v2 > best:
                            best = v2
                            off = 2
                        if v3 > best:
                            best = v3
                            off = 3
                        out[b, ci, i, j] = best
                        arg[b, ci, i, j] = off


def _maxpool_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] out, int[:, :, :, ::1] arg,
                     Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t b, ci, i, j, ki, kj, r, q
    cdef int best_off
    cdef floating best, v
    cdef bint found
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        found = False
                        best = 0
                        best_off = 0
                        for ki in range(k):
                            r = i * stride + ki - pad
                            for kj in range(k):
                                q = j * stride + kj - pad
                                if r < 0 or r >= h or q < 0 or q >= w:
                                    continue
                                v = x[b, ci, r, q]
                                if not found or v > best:
                                    best = v
                                    best_off = <int>(ki * k + kj)
                                    found = True
                        out[b, ci, i, j] = best
                        arg[b, ci, i, j] = best_off


def _maxpool_backward(floating[:, :, :, ::1] dout, int[:, :, :, ::1] arg, floating[:, :, :, ::1] dx,
                      Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], ho = dout.shape[2], wo = dout.shape[3]
    cdef Py_ssize_t b, ci, i, j, off
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        off = arg[b, ci, i, j]
                        dx[b, ci, i * stride + off // k - pad, j * stride + off % k - pad] += dout[b, ci, i, j]


def im2col(x, k, dilation=1, stride=1, pad=0, out=None):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = _out_extent(h, k, dilation, stride, pad)
    wo = _out_extent(w, k, dilation, stride, pad)
    shape = (n, ho, wo, c * k * k)
    if out is not None and out.shape == shape and out.dtype == x.dtype:
        cols = out
    else:
        cols = np.empty(shape, dtype=x.dtype)
    _im2col(x, cols, k, dilation, stride, pad)
    return cols


def col2im(cols, x_shape, k, dilation=1, stride=1, pad=0):
    cols = np.ascontiguousarray(cols)
    dx = np.zeros(x_shape, dtype=cols.dtype)
    _col2im(cols, dx, k, dilation, stride, pad)
    return dx


def maxpool_forward(x, k, stride, pad=0):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = _out_extent(h, k, 1, stride, pad)
    wo = _out_extent(w, k, 1, stride, pad)
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int32)
    if k == 2 and stride == 2 and pad == 0:
        _maxpool2x2_forward(x, out, arg)
    else:
        _maxpool_forward(x, out, arg, k, stride, pad)
    return out, arg


def maxpool_backward(dout, arg, x_shape, k, stride, pad=0):
    dout = np.ascontiguousarray(dout)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    _maxpool_backward(dout, np.ascontiguousarray(arg, dtype=np.int32), dx, k, stride, pad)
    return dx
