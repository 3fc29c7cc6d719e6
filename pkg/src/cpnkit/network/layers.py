"""Stateful layer wrappers over the tensorcore primitives.

Each layer owns named parameters in a ParamStore, caches what its
backward pass needs when running in train mode, and accumulates
parameter gradients into the store. Eval-mode forwards cache nothing,
so inference stays reentrant over shared parameters.
"""
from __future__ import annotations

import numpy as np

from cpnkit.tensorcore import ops
from cpnkit.tensorcore.grid import ParamStore


class Conv2D:
    """Convolution with optional bias; He-normal initialized."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int, k: int,
                 stride: int = 1, padding: int = 0, bias: bool = True, rng=None):
        self.name = name
        self.stride = stride
        self.padding = padding
        self.k = k
        self.c_in = c_in
        self.c_out = c_out
        rng = rng or np.random.default_rng(0)
        std = float(np.sqrt(2.0 / (c_in * k * k)))
        self.w = store.add(f"{name}.weight",
                           rng.normal(0.0, std, size=(c_out, c_in, k, k)),
                           weight_decay=True)
        self.b = store.add(f"{name}.bias", np.zeros(c_out)) if bias else None
        self._x = None
        self.last_macs = 0  # per-sample MACs of the most recent forward

    def forward(self, x, train: bool):
        if train:
            self._x = x
        w = self.w.data.astype(x.dtype, copy=False)
        b = self.b.data.astype(x.dtype, copy=False) if self.b is not None else None
        y = ops.conv2d_forward(x, w, b, self.stride, self.padding)
        self.last_macs = self.c_in * self.c_out * self.k * self.k * y.shape[-2] * y.shape[-1]
        return y

    def backward(self, gy):
        x = self._x
        w = self.w.data.astype(gy.dtype, copy=False)
        gx, gw, gb = ops.conv2d_backward(gy, x, w, self.stride, self.padding,
                                         with_bias=self.b is not None)
        self.w.accumulate_grad(gw.astype(np.float32, copy=False))
        if self.b is not None:
            self.b.accumulate_grad(gb.astype(np.float32, copy=False))
        self._x = None
        return gx

    def out_hw(self, h, w):
        return ops.conv_output_hw(h, w, self.k, self.stride, self.padding)


class BatchNorm2D:
    def __init__(self, store: ParamStore, name: str, channels: int,
                 momentum: float = 0.9, eps: float = 1e-5):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.scale = store.add(f"{name}.scale", np.ones(channels))
        self.shift = store.add(f"{name}.shift", np.zeros(channels))
        self.running_mean = store.add(f"{name}.running_mean", np.zeros(channels), trainable=False)
        self.running_var = store.add(f"{name}.running_var", np.ones(channels), trainable=False)
        self._cache = None

    def forward(self, x, train: bool):
        scale = self.scale.data.astype(x.dtype, copy=False)
        shift = self.shift.data.astype(x.dtype, copy=False)
        rmean = self.running_mean.data.astype(x.dtype, copy=False)
        rvar = self.running_var.data.astype(x.dtype, copy=False)
        y, cache = ops.batchnorm_forward(x, scale, shift, rmean, rvar, train,
                                         self.momentum, self.eps)
        if train:
            self.running_mean.data[...] = rmean.astype(np.float32, copy=False)
            self.running_var.data[...] = rvar.astype(np.float32, copy=False)
            self._cache = cache
        return y

    def backward(self, gy):
        scale = self.scale.data.astype(gy.dtype, copy=False)
        gx, gscale, gshift = ops.batchnorm_backward(gy, self._cache, scale)
        self.scale.accumulate_grad(gscale.astype(np.float32, copy=False))
        self.shift.accumulate_grad(gshift.astype(np.float32, copy=False))
        self._cache = None
        return gx


class ReLU:
    def __init__(self):
        self._x = None

    def forward(self, x, train: bool):
        if train:
            self._x = x
        return ops.relu_forward(x)

    def backward(self, gy):
        gx = ops.relu_backward(gy, self._x)
        self._x = None
        return gx


class MaxPool:
    def __init__(self, k: int, stride: int):
        self.k = k
        self.stride = stride
        self._idx = None
        self._shape = None

    def forward(self, x, train: bool):
        y, idx = ops.maxpool_forward(x, self.k, self.stride)
        if train:
            self._idx = idx
            self._shape = x.shape
        return y

    def backward(self, gy):
        gx = ops.maxpool_backward(gy, self._idx, self._shape, self.k, self.stride)
        self._idx = None
        return gx


class ConvBN:
    """conv -> batchnorm, optionally followed by relu."""

    def __init__(self, store, name, c_in, c_out, k, stride=1, padding=0, relu=True, rng=None):
        self.conv = Conv2D(store, name, c_in, c_out, k, stride, padding, bias=False, rng=rng)
        self.bn = BatchNorm2D(store, f"{name}.bn", c_out)
        self.relu = ReLU() if relu else None

    def forward(self, x, train):
        y = self.bn.forward(self.conv.forward(x, train), train)
        if self.relu is not None:
            y = self.relu.forward(y, train)
        return y

    def backward(self, gy):
        if self.relu is not None:
            gy = self.relu.backward(gy)
        return self.conv.backward(self.bn.backward(gy))


class BasicBlock:
    """Two 3x3 conv-bn units with a residual add (1x1 conv-bn projection
    when the shape changes)."""

    def __init__(self, store, name, c_in, c_out, stride=1, rng=None):
        self.unit1 = ConvBN(store, f"{name}.conv1", c_in, c_out, 3, stride, 1, relu=True, rng=rng)
        self.unit2 = ConvBN(store, f"{name}.conv2", c_out, c_out, 3, 1, 1, relu=False, rng=rng)
        self.proj = None
        if stride != 1 or c_in != c_out:
            self.proj = ConvBN(store, f"{name}.proj", c_in, c_out, 1, stride, 0, relu=False, rng=rng)
        self.out_relu = ReLU()
        self._x = None

    def forward(self, x, train):
        if train:
            self._x = x
        y = self.unit2.forward(self.unit1.forward(x, train), train)
        skip = self.proj.forward(x, train) if self.proj is not None else x
        return self.out_relu.forward(ops.add_forward(y, skip), train)

    def backward(self, gy):
        gy = self.out_relu.backward(gy)
        gx = self.unit1.backward(self.unit2.backward(gy))
        if self.proj is not None:
            gx = gx + self.proj.backward(gy)
        else:
            gx = gx + gy
        self._x = None
        return gx


class Bottleneck:
    """1x1 reduce -> 3x3 -> 1x1 expand with residual add; the middle
    width is out_channels // expansion."""

    def __init__(self, store, name, c_in, c_out, expansion=2, rng=None):
        mid = max(1, c_out // expansion)
        self.unit1 = ConvBN(store, f"{name}.reduce", c_in, mid, 1, relu=True, rng=rng)
        self.unit2 = ConvBN(store, f"{name}.mid", mid, mid, 3, 1, 1, relu=True, rng=rng)
        self.unit3 = ConvBN(store, f"{name}.expand", mid, c_out, 1, relu=False, rng=rng)
        self.proj = None
        if c_in != c_out:
            self.proj = ConvBN(store, f"{name}.proj", c_in, c_out, 1, relu=False, rng=rng)
        self.out_relu = ReLU()

    def forward(self, x, train):
        y = self.unit3.forward(self.unit2.forward(self.unit1.forward(x, train), train), train)
        skip = self.proj.forward(x, train) if self.proj is not None else x
        return self.out_relu.forward(ops.add_forward(y, skip), train)

    def backward(self, gy):
        gy = self.out_relu.backward(gy)
        gx = self.unit1.backward(self.unit2.backward(self.unit3.backward(gy)))
        if self.proj is not None:
            gx = gx + self.proj.backward(gy)
        else:
            gx = gx + gy
        return gx
