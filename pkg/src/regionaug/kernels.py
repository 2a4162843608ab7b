"""Hot numeric kernels: im2col/col2im for convolutions and bilinear resampling.

Each kernel has a numba-jitted implementation and a pure-numpy fallback.
Set ``REGIONAUG_NUMBA=0`` in the environment to force the numpy path
(useful for debugging and for the benchmark in ``benchmarks/``).
"""

import os

import numpy as np

_WANT_NUMBA = os.environ.get("REGIONAUG_NUMBA", "1") != "0"

if _WANT_NUMBA:
    try:
        from numba import njit
        HAS_NUMBA = True
    except ImportError:  # pragma: no cover
        HAS_NUMBA = False
else:
    HAS_NUMBA = False


def numba_enabled() -> bool:
    """True when the jitted kernel path is active."""
    return HAS_NUMBA


# ---------------------------------------------------------------------------
# im2col / col2im
#
# x: (N, C, H, W) -> cols: (N, C*kh*kw, out_h*out_w)
# Column ordering is (c, ki, kj) row-major, patch ordering row-major.
# ---------------------------------------------------------------------------

def _out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col_numpy(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(w, kw, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(s[0], s[1], s[2], s[3], s[2] * stride, s[3] * stride),
        writeable=False,
    )
    return np.ascontiguousarray(windows.reshape(n, c * kh * kw, oh * ow))


def _col2im_numpy(cols, x_shape, kh, kw, stride, pad):
    n, c, h, w = x_shape
    oh = _out_size(h, kh, stride, pad)
    ow = _out_size(w, kw, stride, pad)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    for ki in range(kh):
        for kj in range(kw):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += cols[:, :, ki, kj]
    if pad > 0:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def _bilinear_numpy(src, out_h, out_w):
    # src: (C, H, W); align-corners=False convention.
    c, h, w = src.shape
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys), 0, h - 1).astype(np.int64)
    x0 = np.clip(np.floor(xs), 0, w - 1).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)
    wx = np.clip(xs - x0, 0.0, 1.0)
    top = src[:, y0][:, :, x0] * (1 - wx) + src[:, y0][:, :, x1] * wx
    bot = src[:, y1][:, :, x0] * (1 - wx) + src[:, y1][:, :, x1] * wx
    return top * (1 - wy[None, :, None]) + bot * wy[None, :, None]


if HAS_NUMBA:

    @njit(cache=True)
    def _im2col_numba(x, kh, kw, stride, pad):
        n, c, h, w = x.shape
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (w + 2 * pad - kw) // stride + 1
        cols = np.zeros((n, c * kh * kw, oh * ow), dtype=x.dtype)
        for b in range(n):
            for ch in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ch * kh + ki) * kw + kj
                        for oi in range(oh):
                            yi = oi * stride + ki - pad
                            if yi < 0 or yi >= h:
                                continue
                            for oj in range(ow):
                                xj = oj * stride + kj - pad
                                if 0 <= xj < w:
                                    cols[b, row, oi * ow + oj] = x[b, ch, yi, xj]
        return cols

    @njit(cache=True)
    def _col2im_numba(cols, n, c, h, w, kh, kw, stride, pad):
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (w + 2 * pad - kw) // stride + 1
        out = np.zeros((n, c, h, w), dtype=cols.dtype)
        for b in range(n):
            for ch in range(c):
                for ki in range(kh):
                    for kj in range(kw):
                        row = (ch * kh + ki) * kw + kj
                        for oi in range(oh):
                            yi = oi * stride + ki - pad
                            if yi < 0 or yi >= h:
                                continue
                            for oj in range(ow):
                                xj = oj * stride + kj - pad
                                if 0 <= xj < w:
                                    out[b, ch, yi, xj] += cols[b, row, oi * ow + oj]
        return out

    @njit(cache=True)
    def _bilinear_numba(src, out_h, out_w):
        c, h, w = src.shape
        out = np.empty((c, out_h, out_w), dtype=src.dtype)
        for oi in range(out_h):
            y = (oi + 0.5) * (h / out_h) - 0.5
            y0 = int(np.floor(y))
            if y0 < 0:
                y0 = 0
            if y0 > h - 1:
                y0 = h - 1
            y1 = min(y0 + 1, h - 1)
            wy = y - y0
            if wy < 0.0:
                wy = 0.0
            if wy > 1.0:
                wy = 1.0
            for oj in range(out_w):
                x = (oj + 0.5) * (w / out_w) - 0.5
                x0 = int(np.floor(x))
                if x0 < 0:
                    x0 = 0
                if x0 > w - 1:
                    x0 = w - 1
                x1 = min(x0 + 1, w - 1)
                wx = x - x0
                if wx < 0.0:
                    wx = 0.0
                if wx > 1.0:
                    wx = 1.0
                for ch in range(c):
                    top = src[ch, y0, x0] * (1 - wx) + src[ch, y0, x1] * wx
                    bot = src[ch, y1, x0] * (1 - wx) + src[ch, y1, x1] * wx
                    out[ch, oi, oj] = top * (1 - wy) + bot * wy
        return out


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Extract sliding conv patches as a (N, C*kh*kw, out_h*out_w) matrix."""
    if HAS_NUMBA:
        return _im2col_numba(np.ascontiguousarray(x), kh, kw, stride, pad)
    return _im2col_numpy(x, kh, kw, stride, pad)


def col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add columns back onto the input grid."""
    if HAS_NUMBA:
        n, c, h, w = x_shape
        return _col2im_numba(np.ascontiguousarray(cols), n, c, h, w, kh, kw, stride, pad)
    return _col2im_numpy(cols, x_shape, kh, kw, stride, pad)


def bilinear_resize(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of a (C, H, W) array to (C, out_h, out_w)."""
    if src.shape[1] == out_h and src.shape[2] == out_w:
        return src.copy()
    if HAS_NUMBA:
        return _bilinear_numba(np.ascontiguousarray(src), out_h, out_w)
    return _bilinear_numpy(src, out_h, out_w)


# Fallback implementations exported for the benchmark / equivalence tests.
im2col_numpy = _im2col_numpy
col2im_numpy = _col2im_numpy
bilinear_numpy = _bilinear_numpy
