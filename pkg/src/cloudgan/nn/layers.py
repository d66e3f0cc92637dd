"""Stateful layer objects over the functional primitives.

Layers cache what their backward pass needs on a LIFO stack, so a module may
be run forward several times before the matching backwards are taken in
reverse order (the discriminator does real/fake passes this way).  All
randomness (weight init, dropout masks) comes from explicitly passed
``numpy.random.Generator`` objects.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ConfigurationError
from . import functional as F

INIT_STD = 0.02  # conv/deconv weight init: N(0, INIT_STD^2); BN gamma N(1, INIT_STD^2)


class Parameter:
    """A learnable array with its gradient accumulator."""

    __slots__ = ("data", "grad")

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data)

    @property
    def shape(self):
        return self.data.shape


class Module:
    """Minimal container tracking parameters, buffers and children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_cache", [])

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, self._buffers[name]
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def named_state(self) -> dict[str, np.ndarray]:
        """Parameters plus buffers; everything a checkpoint must carry."""
        state = {name: p.data for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            src = state[name]
            if src.shape != p.data.shape:
                raise ConfigurationError(
                    f"state mismatch for {name}: {src.shape} vs {p.data.shape}")
            p.data[...] = src
        for name, buf in self.named_buffers():
            buf[...] = state[name]

    def zero_grad(self) -> None:
        for _, p in self.named_parameters():
            p.grad[...] = 0

    def clear_caches(self) -> None:
        self._cache.clear()
        for child in self._children.values():
            child.clear_caches()

    def param_count(self) -> int:
        return sum(p.data.size for _, p in self.named_parameters())

    def forward(self, x, train: bool = False, rng=None):  # pragma: no cover
        raise NotImplementedError

    def backward(self, dy):  # pragma: no cover
        raise NotImplementedError

    def __call__(self, x, train: bool = False, rng=None):
        return self.forward(x, train=train, rng=rng)

    def _pop_cache(self):
        if not self._cache:
            raise ConfigurationError(
                f"{type(self).__name__}.backward called without a pending forward")
        return self._cache.pop()


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._children[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, dilation: int = 1,
                 padding: int | tuple[int, int] = 0, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation
        self.padding = F.as_pad_pair(padding)
        w = rng.standard_normal((out_channels, in_channels, kernel, kernel))
        self.weight = Parameter((w * INIT_STD).astype(dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x, train: bool = False, rng=None):
        y = F.conv2d(x, self.weight.data,
                     self.bias.data if self.bias is not None else None,
                     self.stride, self.dilation, self.padding)
        self._cache.append(x)
        return y

    def backward(self, dy):
        x = self._pop_cache()
        dx, dw, db = F.conv2d_backward(dy, x, self.weight.data, self.stride,
                                       self.dilation, self.padding)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class ConvTranspose2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, dilation: int = 1,
                 padding: int | tuple[int, int] = 0, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.dilation = dilation
        self.padding = F.as_pad_pair(padding)
        w = rng.standard_normal((in_channels, out_channels, kernel, kernel))
        self.weight = Parameter((w * INIT_STD).astype(dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x, train: bool = False, rng=None):
        y = F.conv2d_transpose(x, self.weight.data,
                               self.bias.data if self.bias is not None else None,
                               self.stride, self.dilation, self.padding)
        self._cache.append(x)
        return y

    def backward(self, dy):
        x = self._pop_cache()
        dx, dw, db = F.conv2d_transpose_backward(dy, x, self.weight.data,
                                                 self.stride, self.dilation,
                                                 self.padding)
        self.weight.grad += dw
        if self.bias is not None:
            self.bias.grad += db
        return dx


class BatchNorm2d(Module):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes with the (biased) batch statistics and folds them
    into the running buffers with ``momentum``; eval mode is a pure affine
    map from the running statistics.  Zero-variance channels are stabilized
    by ``eps`` rather than rejected.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1,
                 *, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        g = 1.0 + INIT_STD * rng.standard_normal(channels)
        self.gamma = Parameter(g.astype(dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x, train: bool = False, rng=None):
        if x.shape[1] != self.channels:
            raise ConfigurationError(
                f"batch norm over {self.channels} channels got input {x.shape}")
        if train:
            y, cache = F.batch_norm_train(x, self.gamma.data, self.beta.data,
                                          self.eps)
            m = self.momentum
            self.running_mean *= 1 - m
            self.running_mean += m * cache["mean"].astype(self.running_mean.dtype)
            self.running_var *= 1 - m
            self.running_var += m * cache["var"].astype(self.running_var.dtype)
            self._cache.append(("train", cache))
            return y
        y = F.batch_norm_eval(x, self.gamma.data, self.beta.data,
                              self.running_mean, self.running_var, self.eps)
        self._cache.append(("eval", x))
        return y

    def backward(self, dy):
        kind, cache = self._pop_cache()
        if kind == "eval":  # affine in x given frozen running stats
            x = cache
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean[None, :, None, None]) \
                * inv[None, :, None, None]
            self.gamma.grad += (dy * xhat).sum(axis=(0, 2, 3))
            self.beta.grad += dy.sum(axis=(0, 2, 3))
            return dy * (self.gamma.data * inv)[None, :, None, None]
        dx, dgamma, dbeta = F.batch_norm_train_backward(dy, cache)
        self.gamma.grad += dgamma
        self.beta.grad += dbeta
        return dx


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, train: bool = False, rng=None):
        self._cache.append(x)
        return F.leaky_relu(x, self.slope)

    def backward(self, dy):
        return F.leaky_relu_backward(dy, self._pop_cache(), self.slope)


class ReLU(Module):
    def forward(self, x, train: bool = False, rng=None):
        self._cache.append(x)
        return F.relu(x)

    def backward(self, dy):
        return F.relu_backward(dy, self._pop_cache())


class Tanh(Module):
    def forward(self, x, train: bool = False, rng=None):
        y = F.tanh(x)
        self._cache.append(y)
        return y

    def backward(self, dy):
        return F.tanh_backward(dy, self._pop_cache())


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        self.rate = rate

    def forward(self, x, train: bool = False, rng=None):
        y, mask = F.dropout(x, self.rate, train, rng)
        self._cache.append(mask)
        return y

    def backward(self, dy):
        return F.dropout_backward(dy, self._pop_cache())


class Sequential(Module):
    def __init__(self, *modules: Module):
        super().__init__()
        self.steps = ModuleList(modules)

    def forward(self, x, train: bool = False, rng=None):
        for m in self.steps:
            x = m.forward(x, train=train, rng=rng)
        return x

    def backward(self, dy):
        for m in reversed(list(self.steps)):
            dy = m.backward(dy)
        return dy
