"""Hot inner-loop kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` version and a pure-numpy
version. The active backend is picked once at import from the
``CPNKIT_NUMBA`` env var: "0" forces numpy, "1" requires numba (raises
if it cannot be imported), anything else (or unset) means auto. Both
implementations stay importable so tests and benchmarks can compare
them directly.

``CPNKIT_THREADS`` caps the numba thread pool.
"""
from __future__ import annotations

import os

import numpy as np

_flag = os.environ.get("CPNKIT_NUMBA", "auto").strip().lower()

if _flag == "0":
    HAS_NUMBA = False
else:
    try:
        import numba
        from numba import njit, prange

        HAS_NUMBA = True
    except ImportError:
        if _flag == "1":
            raise
        HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _flag != "0"

if USE_NUMBA:
    _threads = os.environ.get("CPNKIT_THREADS")
    if _threads:
        numba.set_num_threads(max(1, min(int(_threads), numba.config.NUMBA_NUM_THREADS)))


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# im2col / col2im
#
# cols layout: (B, C*kh*kw, n_out) with the C*kh*kw axis ordered c-major
# then kernel-row then kernel-col, matching weight.reshape(C_out, -1).
# ---------------------------------------------------------------------------

def im2col_numpy(x, kh, kw, stride):
    b, c, h, w = x.shape
    h_out = (h - kh) // stride + 1
    w_out = (w - kw) // stride + 1
    sb, sc, sh, sw = x.strides
    patches = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, kh, kw, h_out, w_out),
        strides=(sb, sc, sh, sw, stride * sh, stride * sw),
        writeable=False,
    )
    return np.ascontiguousarray(patches.reshape(b, c * kh * kw, h_out * w_out))


def col2im_numpy(cols, x_shape, kh, kw, stride):
    b, c, h, w = x_shape
    h_out = (h - kh) // stride + 1
    w_out = (w - kw) // stride + 1
    x = np.zeros(x_shape, dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, h_out, w_out)
    for i in range(kh):
        for j in range(kw):
            x[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += cols[:, :, i, j]
    return x


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _im2col_jit(x, kh, kw, stride, cols):
        b, c, h, w = x.shape
        h_out = (h - kh) // stride + 1
        w_out = (w - kw) // stride + 1
        for nb in prange(b):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ci * kh + i) * kw + j
                        for oy in range(h_out):
                            base = oy * stride + i
                            for ox in range(w_out):
                                cols[nb, row, oy * w_out + ox] = x[nb, ci, base, ox * stride + j]

    @njit(cache=True, parallel=True)
    def _col2im_jit(cols, kh, kw, stride, x):
        b, c, h, w = x.shape
        h_out = (h - kh) // stride + 1
        w_out = (w - kw) // stride + 1
        for nb in prange(b):
            for ci in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ci * kh + i) * kw + j
                        for oy in range(h_out):
                            base = oy * stride + i
                            for ox in range(w_out):
                                x[nb, ci, base, ox * stride + j] += cols[nb, row, oy * w_out + ox]

    def im2col_numba(x, kh, kw, stride):
        b, c, h, w = x.shape
        h_out = (h - kh) // stride + 1
        w_out = (w - kw) // stride + 1
        cols = np.empty((b, c * kh * kw, h_out * w_out), dtype=x.dtype)
        _im2col_jit(np.ascontiguousarray(x), kh, kw, stride, cols)
        return cols

    def col2im_numba(cols, x_shape, kh, kw, stride):
        x = np.zeros(x_shape, dtype=cols.dtype)
        _col2im_jit(np.ascontiguousarray(cols), kh, kw, stride, x)
        return x


# ---------------------------------------------------------------------------
# max pooling (records flat argmax per window for the backward scatter)
# ---------------------------------------------------------------------------

def maxpool_numpy(x, k, stride):
    b, c, h, w = x.shape
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    sb, sc, sh, sw = x.strides
    win = np.lib.stride_tricks.as_strided(
        x,
        shape=(b, c, h_out, w_out, k, k),
        strides=(sb, sc, stride * sh, stride * sw, sh, sw),
        writeable=False,
    ).reshape(b, c, h_out, w_out, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    ky, kx = np.divmod(arg, k)
    oy = np.arange(h_out)[None, None, :, None] * stride
    ox = np.arange(w_out)[None, None, None, :] * stride
    idx = ((oy + ky) * w + (ox + kx)).astype(np.int64)
    return np.ascontiguousarray(out), idx


def maxpool_backward_numpy(gy, idx, x_shape):
    b, c = x_shape[0], x_shape[1]
    gx = np.zeros((b, c, x_shape[2] * x_shape[3]), dtype=gy.dtype)
    flat_idx = idx.reshape(b, c, -1)
    np.add.at(gx, (np.arange(b)[:, None, None], np.arange(c)[None, :, None], flat_idx), gy.reshape(b, c, -1))
    return gx.reshape(x_shape)


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _maxpool_jit(x, k, stride, out, idx):
        b, c, h, w = x.shape
        h_out, w_out = out.shape[2], out.shape[3]
        for nb in prange(b):
            for ci in range(c):
                for oy in range(h_out):
                    for ox in range(w_out):
                        y0 = oy * stride
                        x0 = ox * stride
                        best = x[nb, ci, y0, x0]
                        besti = y0 * w + x0
                        for i in range(k):
                            for j in range(k):
                                v = x[nb, ci, y0 + i, x0 + j]
                                if v > best:
                                    best = v
                                    besti = (y0 + i) * w + (x0 + j)
                        out[nb, ci, oy, ox] = best
                        idx[nb, ci, oy, ox] = besti

    @njit(cache=True, parallel=True)
    def _maxpool_bwd_jit(gy, idx, gx_flat):
        b, c, h_out, w_out = gy.shape
        for nb in prange(b):
            for ci in range(c):
                for oy in range(h_out):
                    for ox in range(w_out):
                        gx_flat[nb, ci, idx[nb, ci, oy, ox]] += gy[nb, ci, oy, ox]

    def maxpool_numba(x, k, stride):
        b, c, h, w = x.shape
        h_out = (h - k) // stride + 1
        w_out = (w - k) // stride + 1
        out = np.empty((b, c, h_out, w_out), dtype=x.dtype)
        idx = np.empty((b, c, h_out, w_out), dtype=np.int64)
        _maxpool_jit(np.ascontiguousarray(x), k, stride, out, idx)
        return out, idx

    def maxpool_backward_numba(gy, idx, x_shape):
        b, c, h, w = x_shape
        gx = np.zeros((b, c, h * w), dtype=gy.dtype)
        _maxpool_bwd_jit(np.ascontiguousarray(gy), idx, gx)
        return gx.reshape(x_shape)


# ---------------------------------------------------------------------------
# bilinear warp: out[c, y, x] = img(inv @ [x, y, 1]) with zero padding
# ---------------------------------------------------------------------------

def bilinear_warp_numpy(img, inv, out_h, out_w):
    c, h, w = img.shape
    ys, xs = np.meshgrid(np.arange(out_h, dtype=np.float64), np.arange(out_w, dtype=np.float64), indexing="ij")
    sx = inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]
    sy = inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0

    acc = np.zeros((c, out_h, out_w), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            xi_c = np.clip(xi, 0, w - 1)
            yi_c = np.clip(yi, 0, h - 1)
            acc += img[:, yi_c, xi_c] * (wgt * valid)
    return acc.astype(img.dtype, copy=False)


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _warp_jit(img, inv, out):
        c, h, w = img.shape
        out_h, out_w = out.shape[1], out.shape[2]
        for oy in prange(out_h):
            for ox in range(out_w):
                sx = inv[0, 0] * ox + inv[0, 1] * oy + inv[0, 2]
                sy = inv[1, 0] * ox + inv[1, 1] * oy + inv[1, 2]
                x0 = int(np.floor(sx))
                y0 = int(np.floor(sy))
                fx = sx - x0
                fy = sy - y0
                for ci in range(c):
                    acc = 0.0
                    for dy in range(2):
                        yi = y0 + dy
                        if yi < 0 or yi >= h:
                            continue
                        wy = fy if dy == 1 else 1.0 - fy
                        for dx in range(2):
                            xi = x0 + dx
                            if xi < 0 or xi >= w:
                                continue
                            wx = fx if dx == 1 else 1.0 - fx
                            acc += wy * wx * img[ci, yi, xi]
                    out[ci, oy, ox] = acc

    def bilinear_warp_numba(img, inv, out_h, out_w):
        out = np.zeros((img.shape[0], out_h, out_w), dtype=img.dtype)
        _warp_jit(np.ascontiguousarray(img), np.ascontiguousarray(inv.astype(np.float64)), out)
        return out


# ---------------------------------------------------------------------------
# dispatchers
# ---------------------------------------------------------------------------

if USE_NUMBA:
    im2col = im2col_numba
    col2im = col2im_numba
    maxpool = maxpool_numba
    maxpool_backward = maxpool_backward_numba
    bilinear_warp = bilinear_warp_numba
else:
    im2col = im2col_numpy
    col2im = col2im_numpy
    maxpool = maxpool_numpy
    maxpool_backward = maxpool_backward_numpy
    bilinear_warp = bilinear_warp_numpy
