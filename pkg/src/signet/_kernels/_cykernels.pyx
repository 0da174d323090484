# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled layer kernels: conv2d, max pooling, cross-channel normalization.

Same contracts as python_backend: float64 accumulation with a single final
rounding to the input dtype, NCHW layout, deterministic output (parallel
loops only ever split over independent output elements).
"""

import numpy as np

cimport cython
cimport openmp
from cython.parallel import prange

BACKEND_NAME = "cython"

ctypedef fused floating:
    float
    double


def set_num_threads(n):
    """Cap the OpenMP worker count for subsequent kernel calls."""
    openmp.omp_set_num_threads(int(n))


def _pad(x, Py_ssize_t pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d_forward(x, w, b, int stride, int pad):
    """Cross-correlation of x [N,C,H,W] with w [O,C,kh,kw] plus bias [O].

    Accumulates into a float64 buffer in shift-and-scale form (vectorizable
    over the output row; per-element accumulation order is the fixed
    channel/kernel scan), then rounds once to the input dtype.
    """
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wid + 2 * pad - kw) // stride + 1
    xp = np.asarray(_pad(x, pad), dtype=np.float64)
    acc = np.empty((n, o, oh, ow), dtype=np.float64)
    acc[:] = np.asarray(b, dtype=np.float64)[None, :, None, None]
    _conv_fwd(xp, np.ascontiguousarray(w, dtype=np.float64), acc, stride)
    return acc.astype(x.dtype)


def _conv_fwd(double[:, :, :, ::1] xp, double[:, :, :, ::1] w,
              double[:, :, :, ::1] acc, int stride):
    cdef Py_ssize_t n = acc.shape[0], o = acc.shape[1], oh = acc.shape[2], ow = acc.shape[3]
    cdef Py_ssize_t c = xp.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t i, j, k, p, q, r, s
    cdef double wv
    cdef double *xrow
    cdef double *arow
    for i in prange(n, nogil=True, schedule='static'):
        for j in range(o):
            for k in range(c):
                for r in range(kh):
                    for s in range(kw):
                        wv = w[j, k, r, s]
                        for p in range(oh):
                            arow = &acc[i, j, p, 0]
                            if stride == 1:
                                xrow = &xp[i, k, p + r, s]
                                for q in range(ow):
                                    arow[q] += wv * xrow[q]
                            else:
                                xrow = &xp[i, k, p * stride + r, s]
                                for q in range(ow):
                                    arow[q] += wv * xrow[q * stride]


def conv2d_backward(x, w, int stride, int pad, gy):
    """Gradients (gx, gw, gb) of the cross-correlation."""
    n, c, h, wid = x.shape
    xp = np.asarray(_pad(x, pad), dtype=np.float64)
    g64 = np.ascontiguousarray(gy, dtype=np.float64)
    w64 = np.ascontiguousarray(w, dtype=np.float64)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w64)
    gb = g64.sum(axis=(0, 2, 3))
    _conv_bwd(xp, w64, g64, gxp, gw, stride)
    gx = gxp[:, :, pad:pad + h, pad:pad + wid] if pad else gxp
    return (gx.astype(x.dtype), gw.astype(np.asarray(w).dtype),
            gb.astype(np.asarray(w).dtype))


def _conv_bwd(double[:, :, :, ::1] xp, double[:, :, :, ::1] w,
              double[:, :, :, ::1] gy, double[:, :, :, ::1] gxp,
              double[:, :, :, ::1] gw, int stride):
    cdef Py_ssize_t n = gy.shape[0], o = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t c = xp.shape[1], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t i, j, k, p, q, r, s, tail
    cdef double wv, a0, a1, a2, a3
    cdef double *xrow
    cdef double *grow
    cdef double *orow

    # gw[j,k,r,s] = sum_{i,p,q} gy[i,j,p,q] * xp[...]; four partial sums for ILP
    for j in prange(o, nogil=True, schedule='static'):
        for k in range(c):
            for r in range(kh):
                for s in range(kw):
                    a0 = 0.0
                    a1 = 0.0
                    a2 = 0.0
                    a3 = 0.0
                    for i in range(n):
                        for p in range(oh):
                            grow = &gy[i, j, p, 0]
                            if stride == 1:
                                xrow = &xp[i, k, p + r, s]
                            else:
                                xrow = &xp[i, k, p * stride + r, s]
                            tail = 4 * (ow / 4)
                            if stride == 1:
                                for q in range(0, tail, 4):
                                    a0 = a0 + grow[q] * xrow[q]
                                    a1 = a1 + grow[q + 1] * xrow[q + 1]
                                    a2 = a2 + grow[q + 2] * xrow[q + 2]
                                    a3 = a3 + grow[q + 3] * xrow[q + 3]
                                for q in range(tail, ow):
                                    a0 = a0 + grow[q] * xrow[q]
                            else:
                                for q in range(ow):
                                    a0 = a0 + grow[q] * xrow[q * stride]
                    gw[j, k, r, s] = (a0 + a1) + (a2 + a3)

    # gxp scatter: gxp[i,k,p*stride+r,q*stride+s] += w[j,k,r,s] * gy[i,j,p,q]
    for i in prange(n, nogil=True, schedule='static'):
        for k in range(c):
            for j in range(o):
                for r in range(kh):
                    for s in range(kw):
                        wv = w[j, k, r, s]
                        for p in range(oh):
                            grow = &gy[i, j, p, 0]
                            if stride == 1:
                                orow = &gxp[i, k, p + r, s]
                                for q in range(ow):
                                    orow[q] += wv * grow[q]
                            else:
                                orow = &gxp[i, k, p * stride + r, s]
                                for q in range(ow):
                                    orow[q * stride] += wv * grow[q]


def maxpool_forward(x, int kh, int kw, int stride):
    """Max pooling; returns the output and flat H*W argmax indices per window."""
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    y = np.empty((n, c, oh, ow), dtype=x.dtype)
    idx = np.empty((n, c, oh, ow), dtype=np.int64)
    _pool_fwd(np.ascontiguousarray(x), y, idx, kh, kw, stride)
    return y, idx


def _pool_fwd(floating[:, :, :, ::1] x, floating[:, :, :, ::1] y,
              long long[:, :, :, ::1] idx, int kh, int kw, int stride):
    cdef Py_ssize_t n = y.shape[0], c = y.shape[1], oh = y.shape[2], ow = y.shape[3]
    cdef Py_ssize_t w = x.shape[3]
    cdef Py_ssize_t i, k, p, q, r, s, bh, bw
    cdef floating best, v
    for i in prange(n, nogil=True, schedule='static'):
        for k in range(c):
            for p in range(oh):
                for q in range(ow):
                    best = x[i, k, p * stride, q * stride]
                    bh = p * stride
                    bw = q * stride
                    for r in range(kh):
                        for s in range(kw):
                            v = x[i, k, p * stride + r, q * stride + s]
                            if v > best:  # strict: ties keep the first offset
                                best = v
                                bh = p * stride + r
                                bw = q * stride + s
                    y[i, k, p, q] = best
                    idx[i, k, p, q] = bh * w + bw


def maxpool_backward(idx, gy, int h, int w):
    """Routes each window gradient to its argmax position (accumulating)."""
    n, c, oh, ow = gy.shape
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    _pool_bwd(np.ascontiguousarray(idx), np.ascontiguousarray(gy), gx, w)
    return gx


def _pool_bwd(long long[:, :, :, ::1] idx, floating[:, :, :, ::1] gy,
              floating[:, :, :, ::1] gx, int w):
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t i, k, p, q
    cdef long long f
    # parallel over (i, k): overlapping windows only collide within one plane
    for i in prange(n, nogil=True, schedule='static'):
        for k in range(c):
            for p in range(oh):
                for q in range(ow):
                    f = idx[i, k, p, q]
                    gx[i, k, f / w, f % w] += gy[i, k, p, q]


def lrn_forward(x, double alpha, double beta, double k, int n):
    """Cross-channel response normalization: x / (k + alpha * window_sum(x^2))^beta.

    Channel-window sums run in C as contiguous plane adds; the power is one
    vectorized numpy call. The cache holds the scale and its -beta power.
    """
    xc = np.ascontiguousarray(x)
    sq = np.square(xc, dtype=np.float64)
    scale = np.empty(x.shape, dtype=np.float64)
    _window_sum(sq, scale, n)
    scale *= alpha
    scale += k
    powered = scale ** (-beta)
    y = (xc * powered).astype(x.dtype)
    return y, (scale, powered)


def lrn_backward(x, cache, gy, double alpha, double beta, int n):
    scale, powered = cache
    xc = np.ascontiguousarray(x)
    inner = np.multiply(gy, xc, dtype=np.float64)
    inner *= powered
    inner /= scale
    t = np.empty(x.shape, dtype=np.float64)
    _window_sum(np.ascontiguousarray(inner), t, n)
    t *= xc
    t *= 2.0 * alpha * beta
    gx = np.multiply(gy, powered, dtype=np.float64)
    gx -= t
    return gx.astype(x.dtype)


def _window_sum(double[:, :, :, ::1] v, double[:, :, :, ::1] out, int n):
    """out[:, j] = sum of v[:, j-n//2 .. j+n//2] planes, ascending order."""
    cdef Py_ssize_t nn = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3]
    cdef Py_ssize_t half = n // 2
    cdef Py_ssize_t plane = h * w
    cdef Py_ssize_t i, j, lo, hi, t, e
    cdef double *vp
    cdef double *op
    for i in prange(nn, nogil=True, schedule='static'):
        for j in range(c):
            lo = j - half if j - half > 0 else 0
            hi = j + half if j + half < c - 1 else c - 1
            op = &out[i, j, 0, 0]
            for e in range(plane):
                op[e] = 0.0
            for t in range(lo, hi + 1):
                vp = &v[i, t, 0, 0]
                for e in range(plane):
                    op[e] += vp[e]
