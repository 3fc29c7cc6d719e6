"""Differentiable dense-array primitives.

Forward functions take and return numpy arrays shaped (C, H, W) or
(B, C, H, W); 3-D inputs are treated as a single-item batch. Each
forward has a matching backward that maps the output gradient to input
and parameter gradients. Arrays keep their dtype, so the same code path
runs float32 for training and float64 for finite-difference checks.

Convolution is im2col + one BLAS matmul; the im2col/col2im copies are
the hot loops and dispatch through :mod:`cpnkit.tensorcore.kernels`.
"""
from __future__ import annotations

import numpy as np

from cpnkit.tensorcore import kernels


def _lift(x):
    """View a (C,H,W) array as (1,C,H,W); report whether it was lifted."""
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected 3-D or 4-D array, got shape {x.shape}")


def _drop(y, lifted):
    return y[0] if lifted else y


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv_output_hw(h, w, k, stride, padding):
    return (h + 2 * padding - k) // stride + 1, (w + 2 * padding - k) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x, w, b=None, stride=1, padding=0):
    """Cross-correlate x with kernel w (C_out, C_in, k, k) plus bias."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    x4, lifted = _lift(x)
    bsz, c_in, h, wd = x4.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in_w != c_in:
        raise ValueError(f"kernel expects {c_in_w} input channels (kernel shape {w.shape}) "
                         f"but input has {c_in} (input shape {x4.shape})")
    h_out, w_out = conv_output_hw(h, wd, kh, stride, padding)
    if h_out <= 0 or w_out <= 0:
        raise ValueError(f"kernel {w.shape} does not fit input {x4.shape} with stride={stride} padding={padding}")

    xp = _pad(x4, padding)
    wmat = w.reshape(c_out, -1)
    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride].reshape(bsz, c_in, h_out * w_out)
    else:
        cols = kernels.im2col(xp, kh, kw, stride)
    y = np.matmul(wmat, cols).reshape(bsz, c_out, h_out, w_out)
    if b is not None:
        if b.shape != (c_out,):
            raise ValueError(f"bias shape {b.shape} does not match {c_out} output channels")
        y += b[None, :, None, None]
    return _drop(y, lifted)


def conv2d_backward(gy, x, w, stride=1, padding=0, with_bias=True, need_gx=True):
    """Gradients of conv2d w.r.t. input, kernel and bias.

    Returns (gx, gw, gb); gx is None when ``need_gx`` is False, gb is
    None when ``with_bias`` is False.
    """
    x4, lifted = _lift(x)
    gy4, _ = _lift(gy)
    bsz, c_in, h, wd = x4.shape
    c_out, _, kh, kw = w.shape
    n = gy4.shape[2] * gy4.shape[3]

    gb = gy4.sum(axis=(0, 2, 3)) if with_bias else None

    xp = _pad(x4, padding)
    go = gy4.reshape(bsz, c_out, n)
    wmat = w.reshape(c_out, -1)

    if kh == 1 and kw == 1:
        cols = xp[:, :, ::stride, ::stride].reshape(bsz, c_in, n)
    else:
        cols = kernels.im2col(xp, kh, kw, stride)
    gw = np.einsum("bon,bcn->oc", go, cols, optimize=True).reshape(w.shape)

    gx = None
    if need_gx:
        gcols = np.matmul(wmat.T, go)
        if kh == 1 and kw == 1:
            gxp = np.zeros_like(xp)
            gxp[:, :, ::stride, ::stride] = gcols.reshape(bsz, c_in, gy4.shape[2], gy4.shape[3])
        else:
            gxp = kernels.col2im(gcols, xp.shape, kh, kw, stride)
        if padding:
            gxp = gxp[:, :, padding:-padding, padding:-padding]
        gx = _drop(np.ascontiguousarray(gxp), lifted)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# batch normalization
# ---------------------------------------------------------------------------

def batchnorm_forward(x, scale, shift, running_mean, running_var, train,
                      momentum=0.9, eps=1e-5):
    """Per-channel normalization over batch and spatial positions.

    Train mode normalizes with batch statistics and updates the running
    buffers in place as ``running = momentum * running + (1 - momentum)
    * batch``; eval mode normalizes with the running buffers. Returns
    (y, cache) where cache feeds :func:`batchnorm_backward`.
    """
    x4, lifted = _lift(x)
    bsz, c, h, w = x4.shape
    if h * w == 0:
        raise ValueError(f"batchnorm requires a non-empty spatial extent, got input shape {x4.shape}")
    if scale.shape != (c,) or shift.shape != (c,):
        raise ValueError(f"scale/shift shapes {scale.shape}/{shift.shape} do not match {c} channels")

    if train:
        mean = x4.mean(axis=(0, 2, 3))
        var = x4.var(axis=(0, 2, 3))
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mean = running_mean
        var = running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x4 - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = scale[None, :, None, None] * xhat + shift[None, :, None, None]
    cache = (xhat, inv_std.astype(x4.dtype), bool(train), lifted)
    return _drop(y.astype(x4.dtype, copy=False), lifted), cache


def batchnorm_backward(gy, cache, scale):
    """Gradients w.r.t. input, scale and shift from a forward cache."""
    xhat, inv_std, train, lifted = cache
    gy4, _ = _lift(gy)
    axes = (0, 2, 3)
    gshift = gy4.sum(axis=axes)
    gscale = (gy4 * xhat).sum(axis=axes)

    gxhat = gy4 * scale[None, :, None, None]
    if train:
        n = gy4.shape[0] * gy4.shape[2] * gy4.shape[3]
        gx = (inv_std[None, :, None, None] / n) * (
            n * gxhat
            - gxhat.sum(axis=axes, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
        )
    else:
        gx = gxhat * inv_std[None, :, None, None]
    return _drop(gx.astype(gy4.dtype, copy=False), lifted), gscale, gshift


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(gy, x):
    return gy * (x > 0)


def add_forward(a, b):
    if a.shape != b.shape:
        raise ValueError(f"add requires identical shapes, got {a.shape} and {b.shape}")
    return a + b


def add_backward(gy):
    return gy, gy


def concat_channels_forward(parts):
    """Concatenate along the channel axis; spatial extents must match."""
    base = parts[0]
    for p in parts[1:]:
        if p.shape[:-3] != base.shape[:-3] or p.shape[-2:] != base.shape[-2:]:
            raise ValueError(f"concat requires matching batch/spatial extents, got "
                             f"{[tuple(q.shape) for q in parts]}")
    return np.concatenate(parts, axis=-3)


def concat_channels_backward(gy, channel_sizes):
    splits = np.cumsum(channel_sizes)[:-1]
    return np.split(gy, splits, axis=-3)


def upsample_nearest_forward(x, factor):
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    return np.repeat(np.repeat(x, factor, axis=-2), factor, axis=-1)


def upsample_nearest_backward(gy, factor):
    if factor == 1:
        return gy
    lead = gy.shape[:-2]
    h, w = gy.shape[-2] // factor, gy.shape[-1] // factor
    return gy.reshape(*lead, h, factor, w, factor).sum(axis=(-3, -1))


def maxpool_forward(x, k, stride):
    """Max pooling; returns (y, idx) where idx holds flat argmax positions."""
    x4, lifted = _lift(x)
    if (x4.shape[2] - k) % stride or (x4.shape[3] - k) % stride:
        raise ValueError(f"pool k={k} stride={stride} does not tile input shape {x4.shape}")
    y, idx = kernels.maxpool(x4, k, stride)
    return _drop(y, lifted), idx


def maxpool_backward(gy, idx, x_shape, k, stride):
    gy4, lifted = _lift(gy)
    shape4 = (1, *x_shape) if len(x_shape) == 3 else tuple(x_shape)
    gx = kernels.maxpool_backward(gy4, idx, shape4)
    return _drop(gx, lifted)
