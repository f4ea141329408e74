"""Parameters, modules and the small set of layers the model is built from."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ConfigError
from . import tensor as T
from .conv import ConvSpec, conv3d
from .tensor import Tensor

ORIGINS = ("pretrained-2d", "new-3d", "adapter")


class Parameter(Tensor):
    """Leaf tensor carrying a freezing tag.

    ``origin`` records where the weights come from: ``pretrained-2d`` weights
    stand in for a pretrained backbone and are frozen, ``new-3d`` and
    ``adapter`` weights are trained.
    """

    def __init__(self, data, origin: str = "new-3d", frozen: bool | None = None):
        if origin not in ORIGINS:
            raise ConfigError(f"unknown parameter origin {origin!r}")
        super().__init__(np.array(data, copy=True))
        self.origin = origin
        self.frozen = origin == "pretrained-2d" if frozen is None else bool(frozen)
        self.requires_grad = not self.frozen

    def __repr__(self) -> str:
        tag = "frozen" if self.frozen else "trainable"
        return f"Parameter(shape={self.shape}, {self.origin}, {tag})"


class Module:
    """Container that discovers parameters and submodules from attributes."""

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_origin(self, origin: str) -> "Module":
        """Retag every parameter below this module (frozen iff pretrained-2d)."""
        for p in self.parameters():
            p.origin = origin
            p.frozen = origin == "pretrained-2d"
            p.requires_grad = not p.frozen
        return self

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, bias: bool = True,
                 origin: str = "new-3d", zero: bool = False):
        w = np.zeros((c_in, c_out)) if zero else _uniform(rng, (c_in, c_out), c_in)
        self.weight = Parameter(w, origin)
        self.bias = Parameter(np.zeros(c_out), origin) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, origin: str = "new-3d", eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim), origin)
        self.beta = Parameter(np.zeros(dim), origin)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return T.layernorm(x, self.gamma, self.beta, self.eps)


class MLP(Module):
    """Two linear layers with GELU in between."""

    def __init__(self, c_in: int, hidden: int, c_out: int, rng: np.random.Generator,
                 origin: str = "new-3d"):
        self.fc1 = Linear(c_in, hidden, rng, origin=origin)
        self.fc2 = Linear(hidden, c_out, rng, origin=origin)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class Conv3d(Module):
    def __init__(self, c_in: int, c_out: int, kernel, rng: np.random.Generator, stride=1,
                 padding=0, groups: int = 1, transposed: bool = False, bias: bool = True,
                 origin: str = "new-3d"):
        self.spec = ConvSpec(kernel, stride, padding, groups, transposed)
        shape = self.spec.weight_shape(c_in, c_out)
        fan_in = (c_in // groups) * int(np.prod(self.spec.kernel_shape))
        self.weight = Parameter(_uniform(rng, shape, fan_in), origin)
        self.bias = Parameter(np.zeros(c_out), origin) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, self.spec)


def count_parameters(module: Module) -> dict[str, int]:
    frozen = sum(p.size for p in module.parameters() if p.frozen)
    trainable = sum(p.size for p in module.parameters() if not p.frozen)
    return {"frozen_count": frozen, "trainable_count": trainable, "total_count": frozen + trainable}


def attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    d = q.shape[-1]
    scores = T.matmul(q, T.transpose(k, _swap_last(k.ndim))) * (1.0 / np.sqrt(d))
    return T.matmul(T.softmax(scores, axis=-1), v)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


class MultiHeadAttention(Module):
    """Multi-head attention with separate q/k/v/out projections.

    ``internal_dim`` below ``dim`` gives the down-projected attention used in
    SAM's two-way decoder.
    """

    def __init__(self, dim: int, num_heads: int, rng: np.random.Generator,
                 internal_dim: int | None = None, kv_dim: int | None = None,
                 origin: str = "new-3d"):
        internal_dim = internal_dim or dim
        if internal_dim % num_heads:
            raise ConfigError(f"attention width {internal_dim} not divisible by {num_heads} heads")
        kv_dim = kv_dim or dim
        self.num_heads = num_heads
        self.q = Linear(dim, internal_dim, rng, origin=origin)
        self.k = Linear(kv_dim, internal_dim, rng, origin=origin)
        self.v = Linear(kv_dim, internal_dim, rng, origin=origin)
        self.out = Linear(internal_dim, dim, rng, origin=origin)

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, c = x.shape
        h = self.num_heads
        x = T.reshape(x, (*lead, n, h, c // h))
        nd = x.ndim
        return T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))

    def _merge(self, x: Tensor) -> Tensor:
        nd = x.ndim
        x = T.transpose(x, tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1))
        *lead, n, h, d = x.shape
        return T.reshape(x, (*lead, n, h * d))

    def forward(self, q: Tensor, k: Tensor | None = None, v: Tensor | None = None) -> Tensor:
        k = q if k is None else k
        v = k if v is None else v
        o = attention(self._split(self.q(q)), self._split(self.k(k)), self._split(self.v(v)))
        return self.out(self._merge(o))
