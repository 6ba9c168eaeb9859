"""Stateful layer objects over the kernels in :mod:`fastcifar.ops`.

Each layer caches what its backward pass needs during a forward call. The
network is a fixed sequence, so reverse-mode differentiation is just walking
the layers backwards.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import ndtr

from . import ops
from .exceptions import StateError


@dataclass(eq=False)
class Param:
    value: np.ndarray
    requires_grad: bool = True
    group: str = "other"
    grad: np.ndarray | None = None


class Layer:
    params: dict[str, Param]
    buffers: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.buffers = {}
        self._cache = None

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, need_input: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a preceding training forward")
        cache, self._cache = self._cache, None
        return cache

    def named_params(self, prefix: str = "") -> Iterator[tuple[str, Param]]:
        for k, p in self.params.items():
            yield prefix + k, p

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for k, b in self.buffers.items():
            yield prefix + k, b

    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for _, p in self.named_params())


class Conv2d(Layer):
    def __init__(self, weight: np.ndarray, bias: np.ndarray | None = None, padding: str = "same"):
        super().__init__()
        self.padding = padding
        self.params["weight"] = Param(weight)
        if bias is not None:
            self.params["bias"] = Param(bias)

    @property
    def weight(self) -> Param:
        return self.params["weight"]

    @property
    def bias(self) -> Param | None:
        return self.params.get("bias")

    def forward(self, x, training=False):
        b = self.bias.value if self.bias is not None else None
        if training:
            self._cache = x
        return ops.conv2d(x, self.weight.value, b, self.padding)

    def backward(self, grad, need_input=True):
        x = self._take_cache()
        w, b = self.weight, self.bias
        dx, dw, db = ops.conv2d_backward(
            grad, x, w.value, self.padding, need_input=need_input,
            need_weight=w.requires_grad, need_bias=b is not None and b.requires_grad)
        w.grad = dw
        if b is not None:
            b.grad = db
        return dx


class MaxPool2d(Layer):
    def __init__(self, k: int):
        super().__init__()
        if k <= 0:
            raise ValueError(f"pool size must be positive, got {k}")
        self.k = k

    def forward(self, x, training=False):
        out, arg = ops.maxpool2d(x, self.k)
        if training:
            self._cache = (arg, x.shape)
        return out

    def backward(self, grad, need_input=True):
        arg, shape = self._take_cache()
        return ops.maxpool2d_backward(grad, arg, shape, self.k) if need_input else None


class BatchNorm2d(Layer):
    """Batch norm with a frozen unit scale and a learnable bias."""

    def __init__(self, channels: int, retention: float = 0.6, eps: float = 1e-12, dtype=np.float32):
        super().__init__()
        self.retention = retention
        self.eps = eps
        self.params["weight"] = Param(np.ones(channels, dtype), requires_grad=False, group="frozen")
        self.params["bias"] = Param(np.zeros(channels, dtype), group="norm_bias")
        self.buffers["running_mean"] = np.zeros(channels, dtype)
        self.buffers["running_var"] = np.ones(channels, dtype)

    def forward(self, x, training=False):
        out, cache = ops.batchnorm2d(
            x, self.params["weight"].value, self.params["bias"].value,
            self.buffers["running_mean"], self.buffers["running_var"],
            training, self.retention, self.eps)
        if training:
            self._cache = cache
        return out

    def backward(self, grad, need_input=True):
        dx, dbias = ops.batchnorm2d_backward(grad, self._take_cache(), need_input)
        bias = self.params["bias"]
        bias.grad = dbias if bias.requires_grad else None
        return dx


class GELU(Layer):
    def forward(self, x, training=False):
        cdf = ndtr(x)
        if training:
            self._cache = (x, cdf)
        return x * cdf

    def backward(self, grad, need_input=True):
        x, cdf = self._take_cache()
        return ops.gelu_backward(grad, x, cdf) if need_input else None


class Flatten(Layer):
    def forward(self, x, training=False):
        if training:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad, need_input=True):
        shape = self._take_cache()
        return grad.reshape(shape) if need_input else None


class Linear(Layer):
    def __init__(self, weight: np.ndarray):
        super().__init__()
        self.params["weight"] = Param(weight)

    def forward(self, x, training=False):
        if training:
            self._cache = x
        return ops.linear(x, self.params["weight"].value)

    def backward(self, grad, need_input=True):
        x = self._take_cache()
        w = self.params["weight"]
        dx, dw = ops.linear_backward(grad, x, w.value)
        w.grad = dw if w.requires_grad else None
        return dx if need_input else None


class Scale(Layer):
    def __init__(self, factor: float):
        super().__init__()
        self.factor = factor

    def forward(self, x, training=False):
        if training:
            self._cache = True
        return x * x.dtype.type(self.factor)

    def backward(self, grad, need_input=True):
        self._take_cache()
        return grad * grad.dtype.type(self.factor) if need_input else None


class Sequential(Layer):
    """Ordered container. Children may be named (contributing to parameter names) or anonymous."""

    def __init__(self, children: list[tuple[str | None, Layer]]):
        super().__init__()
        self.children = children

    def __iter__(self):
        return (layer for _, layer in self.children)

    def __getitem__(self, name: str) -> Layer:
        for n, layer in self.children:
            if n == name:
                return layer
        raise KeyError(name)

    def forward(self, x, training=False):
        for layer in self:
            x = layer.forward(x, training)
        return x

    def backward(self, grad, need_input=True):
        layers = list(self)
        # Layers before the first trainable one need no backward pass at all
        # unless the caller wants the input gradient.
        first = 0 if need_input else next((i for i, l in enumerate(layers) if l.trainable), len(layers))
        for i in range(len(layers) - 1, -1, -1):
            if i < first:
                layers[i]._cache = None
                continue
            grad = layers[i].backward(grad, need_input=need_input or i > first)
        return grad if need_input else None

    def named_params(self, prefix=""):
        for n, layer in self.children:
            yield from layer.named_params(prefix + n + "." if n else prefix)

    def named_buffers(self, prefix=""):
        for n, layer in self.children:
            yield from layer.named_buffers(prefix + n + "." if n else prefix)


class Residual(Layer):
    """``out = body(x) + x``."""

    def __init__(self, body: Sequential):
        super().__init__()
        self.body = body

    def forward(self, x, training=False):
        if training:
            self._cache = True
        return self.body.forward(x, training) + x

    def backward(self, grad, need_input=True):
        self._take_cache()
        dbody = self.body.backward(grad, need_input=need_input)
        return grad + dbody if need_input else None

    def named_params(self, prefix=""):
        return self.body.named_params(prefix)

    def named_buffers(self, prefix=""):
        return self.body.named_buffers(prefix)
