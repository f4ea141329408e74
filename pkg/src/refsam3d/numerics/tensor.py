"""Reverse-mode differentiable tensor.

A :class:`Tensor` wraps a numpy array. Every op that touches a tensor with
``requires_grad=True`` records a backward closure and its parents, and
:meth:`Tensor.backward` walks that graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import DimensionError

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """Dense array with optional gradient tracking."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._prev: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._gbuf: np.ndarray | None = None
        self.op = ""

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        out = _make(self.data.astype(dtype), (self,), "astype")
        if out.requires_grad:
            src_dtype = self.data.dtype

            def backward(g):
                self._send(g.astype(src_dtype))

            out._backward = backward
        return out

    # ---------------------------------------------------------------- autograd
    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._gbuf = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            g = node._gbuf
            node._gbuf = None
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
            else:
                node._backward(g)

    def _send(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self._gbuf is None:
            self._gbuf = g
        else:
            self._gbuf = self._gbuf + g

    # ---------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _wrap_other(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._gbuf = None
    out.op = op
    out._backward = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
    else:
        out.requires_grad = False
        out._prev = ()
    return out


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(b, Tensor) else _wrap_other(a, b)
    b = _wrap_other(b, a)
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:

        def backward(g):
            a._send(_unbroadcast(g, a.shape))
            b._send(_unbroadcast(g, b.shape))

        out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(b, Tensor) else _wrap_other(a, b)
    b = _wrap_other(b, a)
    out = _make(a.data - b.data, (a, b), "sub")
    if out.requires_grad:

        def backward(g):
            a._send(_unbroadcast(g, a.shape))
            b._send(_unbroadcast(-g, b.shape))

        out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(b, Tensor) else _wrap_other(a, b)
    b = _wrap_other(b, a)
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:

        def backward(g):
            if a.requires_grad:
                a._send(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._send(_unbroadcast(g * a.data, b.shape))

        out._backward = backward
    return out


def div(a, b) -> Tensor:
    a = as_tensor(a) if not isinstance(b, Tensor) else _wrap_other(a, b)
    b = _wrap_other(b, a)
    out = _make(a.data / b.data, (a, b), "div")
    if out.requires_grad:

        def backward(g):
            if a.requires_grad:
                a._send(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._send(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

        out._backward = backward
    return out


def power(a: Tensor, p: float) -> Tensor:
    out = _make(a.data**p, (a,), "pow")
    if out.requires_grad:

        def backward(g):
            a._send(g * p * a.data ** (p - 1))

        out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = _make(e, (a,), "exp")
    if out.requires_grad:
        out._backward = lambda g: a._send(g * e)
    return out


def log(a: Tensor) -> Tensor:
    out = _make(np.log(a.data), (a,), "log")
    if out.requires_grad:
        out._backward = lambda g: a._send(g / a.data)
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = _make(t, (a,), "tanh")
    if out.requires_grad:
        out._backward = lambda g: a._send(g * (1.0 - t * t))
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _stable_sigmoid(a.data)
    out = _make(s, (a,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda g: a._send(g * s * (1.0 - s))
    return out


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = _make(a.data * mask, (a,), "relu")
    if out.requires_grad:
        out._backward = lambda g: a._send(g * mask)
    return out


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = _make(0.5 * x * (1.0 + t), (a,), "gelu")
    if out.requires_grad:

        def backward(g):
            du = _GELU_C * (1.0 + 0.134145 * x2)
            a._send(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))

        out._backward = backward
    return out


# ---------------------------------------------------------------- reductions
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), "sum")
    if out.requires_grad:
        axes = _norm_axes(axis, a.ndim)

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axes)
            a._send(np.broadcast_to(g, a.shape))

        out._backward = backward
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    n = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tsum(a, axis, keepdims) * (1.0 / n)


# ---------------------------------------------------------------- shape ops
def reshape(a: Tensor, shape) -> Tensor:
    out = _make(a.data.reshape(shape), (a,), "reshape")
    if out.requires_grad:
        src = a.shape
        out._backward = lambda g: a._send(g.reshape(src))
    return out


def transpose(a: Tensor, axes=None) -> Tensor:
    out = _make(np.transpose(a.data, axes), (a,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else tuple(np.argsort(axes))
        out._backward = lambda g: a._send(np.transpose(g, inv))
    return out


def getitem(a: Tensor, idx) -> Tensor:
    out = _make(a.data[idx], (a,), "getitem")
    if out.requires_grad:

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g) if _is_advanced(idx) else _slice_add(full, idx, g)
            a._send(full)

        out._backward = backward
    return out


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray, Tensor)) for i in items)


def _slice_add(full, idx, g):
    full[idx] += g


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat")
    if out.requires_grad:
        sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def backward(g):
            for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
                t._send(piece)

        out._backward = backward
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


def expand_dims(a: Tensor, axis: int) -> Tensor:
    shape = list(a.shape)
    axis = axis % (a.ndim + 1)
    shape.insert(axis, 1)
    return reshape(a, tuple(shape))


def pad(a: Tensor, widths: Sequence[tuple[int, int]]) -> Tensor:
    """Zero-pad; ``widths`` has one (before, after) pair per axis."""
    widths = tuple(tuple(w) for w in widths)
    if not any(b or e for b, e in widths):
        return a
    out = _make(np.pad(a.data, widths), (a,), "pad")
    if out.requires_grad:
        sl = tuple(slice(b, n + b) for (b, _), n in zip(widths, a.shape))
        out._backward = lambda g: a._send(g[sl])
    return out


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = _make(np.broadcast_to(a.data, shape), (a,), "broadcast")
    if out.requires_grad:
        out._backward = lambda g: a._send(_unbroadcast(g, a.shape))
    return out


def upsample_nearest(a: Tensor, factors: Sequence[int]) -> Tensor:
    """Repeat each voxel of a (B, C, D, H, W) tensor by integer factors."""
    fd, fh, fw = factors
    if (fd, fh, fw) == (1, 1, 1):
        return a
    B, C, D, H, W = a.shape
    x = a.data[:, :, :, None, :, None, :, None]
    up = np.broadcast_to(x, (B, C, D, fd, H, fh, W, fw)).reshape(B, C, D * fd, H * fh, W * fw)
    out = _make(np.ascontiguousarray(up), (a,), "upsample")
    if out.requires_grad:

        def backward(g):
            a._send(g.reshape(B, C, D, fd, H, fh, W, fw).sum(axis=(3, 5, 7)))

        out._backward = backward
    return out


# ---------------------------------------------------------------- linear algebra
def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = _wrap_other(b, a)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError(f"matmul inner dimension mismatch: {a.shape} @ {b.shape}")
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:

        def backward(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2)
                a._send(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g
                b._send(_unbroadcast(gb, b.shape))

        out._backward = backward
    return out


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` along the last axis; W is (C_in, C_out)."""
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(
            f"linear: input last axis has {x.shape[-1]} features, weight expects {W.shape[0]}"
        )
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    y = x2 @ W.data
    if b is not None:
        y = y + b.data
    parents = (x, W) if b is None else (x, W, b)
    out = _make(y.reshape(lead + (W.shape[1],)), parents, "linear")
    if out.requires_grad:

        def backward(g):
            g2 = g.reshape(-1, W.shape[1])
            if x.requires_grad:
                x._send((g2 @ W.data.T).reshape(x.shape))
            if W.requires_grad:
                W._send(x2.T @ g2)
            if b is not None and b.requires_grad:
                b._send(g2.sum(axis=0))

        out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _make(s, (x,), "softmax")
    if out.requires_grad:

        def backward(g):
            x._send(s * (g - (g * s).sum(axis=axis, keepdims=True)))

        out._backward = backward
    return out


def layernorm(x: Tensor, gamma: Tensor | None, beta: Tensor | None, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    y = xhat
    if gamma is not None:
        y = y * gamma.data
    if beta is not None:
        y = y + beta.data
    parents = tuple(t for t in (x, gamma, beta) if t is not None)
    out = _make(y, parents, "layernorm")
    if out.requires_grad:
        n = x.shape[-1]

        def backward(g):
            lead_axes = tuple(range(g.ndim - 1))
            if gamma is not None and gamma.requires_grad:
                gamma._send((g * xhat).sum(axis=lead_axes))
            if beta is not None and beta.requires_grad:
                beta._send(g.sum(axis=lead_axes))
            if x.requires_grad:
                gx = g * gamma.data if gamma is not None else g
                dx = rstd * (gx - gx.mean(axis=-1, keepdims=True)
                             - xhat * (gx * xhat).sum(axis=-1, keepdims=True) / n)
                x._send(dx)

        out._backward = backward
    return out


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean voxelwise binary cross-entropy computed from logits."""
    z = logits.data
    t = np.asarray(target, dtype=z.dtype)
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = _make(np.asarray(per.mean()), (logits,), "bce")
    if out.requires_grad:
        n = z.size

        def backward(g):
            logits._send(g * (_stable_sigmoid(z) - t) / n)

        out._backward = backward
    return out


def collect_leaves(out: Tensor) -> Iterable[Tensor]:
    """Yield leaf tensors reachable from ``out`` that require grad."""
    seen: set[int] = set()
    stack = [out]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node.requires_grad and node._backward is None:
            yield node
        stack.extend(node._prev)
