"""Pure-numpy layer kernels, the fallback when the compiled extension is absent.

All kernels accumulate in float64 and round once to the input dtype, so a
float32 forward pass matches a naive double-precision reference bit for bit
and both backends agree to the last ulp of double precision.

Shapes follow the NCHW convention throughout.
"""

import numpy as np

BACKEND_NAME = "python"

# im2col buffers are chunked over the batch axis to stay below this size.
_MAX_COLS_BYTES = 256 * 1024 * 1024


def set_num_threads(n):
    """No-op: the numpy backend threads only through BLAS."""


def _out_dim(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def _windows(xp, kh, kw, stride, oh, ow):
    """Strided view [N, OH, OW, C, kh, kw] over a padded input [N, C, H, W]."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )


def _pad(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _batch_chunks(n, per_sample_bytes):
    step = max(1, int(_MAX_COLS_BYTES // max(1, per_sample_bytes)))
    for lo in range(0, n, step):
        yield lo, min(n, lo + step)


def conv2d_forward(x, w, b, stride, pad):
    """Cross-correlation of x [N,C,H,W] with w [O,C,kh,kw] plus bias [O]."""
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    oh = _out_dim(h, kh, stride, pad)
    ow = _out_dim(wid, kw, stride, pad)
    xp = _pad(np.asarray(x, dtype=np.float64), pad)
    w2 = w.reshape(o, c * kh * kw).astype(np.float64).T
    b64 = b.astype(np.float64)
    y = np.empty((n, o, oh, ow), dtype=x.dtype)
    per_sample = oh * ow * c * kh * kw * 8
    for lo, hi in _batch_chunks(n, per_sample):
        cols = _windows(xp[lo:hi], kh, kw, stride, oh, ow).reshape(
            (hi - lo) * oh * ow, c * kh * kw
        )
        out = cols @ w2 + b64
        y[lo:hi] = (
            out.reshape(hi - lo, oh, ow, o).transpose(0, 3, 1, 2).astype(x.dtype)
        )
    return y


def conv2d_backward(x, w, stride, pad, gy):
    """Gradients (gx, gw, gb) of the cross-correlation."""
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    _, _, oh, ow = gy.shape
    xp = _pad(np.asarray(x, dtype=np.float64), pad)
    g64 = np.asarray(gy, dtype=np.float64)
    w2 = w.reshape(o, c * kh * kw).astype(np.float64)

    gb = g64.sum(axis=(0, 2, 3)).astype(x.dtype)

    gw = np.zeros((c * kh * kw, o), dtype=np.float64)
    gxp = np.zeros_like(xp)
    per_sample = oh * ow * c * kh * kw * 8
    for lo, hi in _batch_chunks(n, per_sample):
        m = (hi - lo) * oh * ow
        cols = _windows(xp[lo:hi], kh, kw, stride, oh, ow).reshape(m, c * kh * kw)
        gcols = g64[lo:hi].transpose(0, 2, 3, 1).reshape(m, o)
        gw += cols.T @ gcols
        # col2im: scatter-add the window gradients back onto the padded input
        rows = (gcols @ w2).reshape(hi - lo, oh, ow, c, kh, kw)
        sub = gxp[lo:hi]
        for i in range(kh):
            for j in range(kw):
                sub[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += (
                    rows[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
    gx = gxp[:, :, pad : pad + h, pad : pad + wid] if pad else gxp
    return gx.astype(x.dtype), gw.T.reshape(w.shape).astype(w.dtype), gb


def maxpool_forward(x, kh, kw, stride):
    """Max pooling; returns the output and flat H*W argmax indices per window."""
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    win = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, oh, ow, kh, kw),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    ).reshape(n, c, oh, ow, kh * kw)
    # np.argmax keeps the first maximum, which fixes the tie-break to the
    # lowest (row-major) window offset.
    amax = win.argmax(axis=-1)
    y = np.take_along_axis(win, amax[..., None], axis=-1)[..., 0]
    ih = (np.arange(oh) * stride)[:, None] + (amax // kw)
    iw = (np.arange(ow) * stride)[None, :] + (amax % kw)
    idx = (ih * w + iw).astype(np.int64)
    return np.ascontiguousarray(y), idx


def maxpool_backward(idx, gy, h, w):
    """Routes each window gradient to its argmax position (accumulating)."""
    n, c, oh, ow = gy.shape
    gx = np.zeros((n * c, h * w), dtype=gy.dtype)
    rows = np.repeat(np.arange(n * c), oh * ow)
    np.add.at(gx, (rows, idx.reshape(-1)), gy.reshape(-1))
    return gx.reshape(n, c, h, w)


def _channel_window_sum(v, n):
    """Sum of v over a +-(n//2) channel window, clipped at the boundaries.

    Accumulates in ascending channel order (matching the compiled backend
    bit for bit).
    """
    half = n // 2
    c = v.shape[1]
    out = np.zeros_like(v)
    for offset in range(-half, half + 1):
        lo = max(0, -offset)
        hi = min(c, c - offset)
        out[:, lo:hi] += v[:, lo + offset : hi + offset]
    return out


def lrn_forward(x, alpha, beta, k, n):
    """Cross-channel response normalization: x / (k + alpha * window_sum(x^2))^beta.

    Returns the output and an opaque cache (scale and its -beta power, both
    float64) consumed by lrn_backward.
    """
    x64 = np.asarray(x, dtype=np.float64)
    scale = k + alpha * _channel_window_sum(x64 * x64, n)
    powered = scale ** (-beta)
    y = (x64 * powered).astype(x.dtype)
    return y, (scale, powered)


def lrn_backward(x, cache, gy, alpha, beta, n):
    scale, powered = cache
    x64 = np.asarray(x, dtype=np.float64)
    g64 = np.asarray(gy, dtype=np.float64)
    t = _channel_window_sum(g64 * x64 * (powered / scale), n)
    gx = g64 * powered - 2.0 * alpha * beta * x64 * t
    return gx.astype(x.dtype)
