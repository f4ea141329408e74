"""3D convolution (grouped, depthwise, transposed) on top of unfold/fold kernels.

1D and 2D convolutions are the 3D ops with singleton leading spatial axes;
see :func:`conv1d` and :func:`conv2d`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError
from . import backend
from .tensor import Tensor, _make, reshape

_AXES = ("depth", "height", "width")


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ConfigError(f"expected an int or a triple, got {v!r}")
    return t  # type: ignore[return-value]


@dataclass(frozen=True)
class ConvSpec:
    kernel_shape: tuple[int, int, int]
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)
    groups: int = 1
    transposed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kernel_shape", _triple(self.kernel_shape))
        object.__setattr__(self, "stride", _triple(self.stride))
        object.__setattr__(self, "padding", _triple(self.padding))
        if min(self.kernel_shape) < 1 or min(self.stride) < 1 or min(self.padding) < 0:
            raise ConfigError(f"invalid conv geometry: {self}")
        if self.groups < 1:
            raise ConfigError(f"groups must be positive, got {self.groups}")

    def check_channels(self, c_in: int, c_out: int) -> None:
        if c_in % self.groups or c_out % self.groups:
            raise ConfigError(
                f"groups={self.groups} must divide in_channels={c_in} and out_channels={c_out}"
            )

    def weight_shape(self, c_in: int, c_out: int) -> tuple[int, ...]:
        self.check_channels(c_in, c_out)
        if self.transposed:
            return (c_in, c_out // self.groups, *self.kernel_shape)
        return (c_out, c_in // self.groups, *self.kernel_shape)

    def output_dims(self, dims) -> tuple[int, int, int]:
        k, s, p = self.kernel_shape, self.stride, self.padding
        if self.transposed:
            return tuple((n - 1) * s[i] - 2 * p[i] + k[i] for i, n in enumerate(dims))  # type: ignore
        out = []
        for i, n in enumerate(dims):
            if n + 2 * p[i] < k[i]:
                raise DimensionError(
                    f"{_AXES[i]} axis: padded extent {n + 2 * p[i]} smaller than kernel {k[i]}"
                )
            out.append((n + 2 * p[i] - k[i]) // s[i] + 1)
        return tuple(out)  # type: ignore[return-value]


def _check_input(x: Tensor, w: Tensor, spec: ConvSpec) -> None:
    if x.ndim != 5:
        raise DimensionError(f"conv3d expects a 5D (B, C, D, H, W) input, got shape {x.shape}")
    if w.ndim != 5:
        raise DimensionError(f"conv3d expects a 5D weight, got shape {w.shape}")
    if tuple(w.shape[2:]) != spec.kernel_shape:
        raise DimensionError(f"weight kernel {w.shape[2:]} != spec kernel {spec.kernel_shape}")
    c_in = x.shape[1]
    if spec.transposed:
        c_out = w.shape[1] * spec.groups
        expected = w.shape[0]
    else:
        c_out = w.shape[0]
        expected = w.shape[1] * spec.groups
    spec.check_channels(c_in, c_out)
    if c_in != expected:
        raise DimensionError(f"channel axis: input has {c_in} channels, weight expects {expected}")


def conv3d(x: Tensor, weight: Tensor, bias: Tensor | None, spec: ConvSpec) -> Tensor:
    """Zero-padded 3D cross-correlation, or its adjoint when ``spec.transposed``.

    Weight layout is (C_out, C_in/groups, kd, kh, kw) for the forward conv and
    (C_in, C_out/groups, kd, kh, kw) for the transposed conv.
    """
    _check_input(x, weight, spec)
    if spec.transposed:
        return _conv_transpose3d(x, weight, bias, spec)
    return _conv3d(x, weight, bias, spec)


def _conv3d(x, weight, bias, spec):
    B, c_in = x.shape[:2]
    c_out = weight.shape[0]
    G = spec.groups
    kd, kh, kw = spec.kernel_shape
    sd, sh, sw = spec.stride
    pd, ph, pw = spec.padding
    od, oh, ow = spec.output_dims(x.shape[2:])
    K = kd * kh * kw
    P = od * oh * ow
    pointwise = K == 1 and spec.stride == (1, 1, 1) and spec.padding == (0, 0, 0)

    if pointwise:
        cols = x.data.reshape(B, c_in, P)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
        cols = backend.vol2col(np.ascontiguousarray(xp), kd, kh, kw, sd, sh, sw, od, oh, ow)
    cols_g = cols.reshape(B, G, (c_in // G) * K, P)
    w_g = weight.data.reshape(G, c_out // G, (c_in // G) * K)
    y = np.matmul(w_g, cols_g).reshape(B, c_out, od, oh, ow)
    if bias is not None:
        y = y + bias.data.reshape(1, c_out, 1, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _make(y, parents, "conv3d")
    if out.requires_grad:
        dims_p = tuple(n + 2 * q for n, q in zip(x.shape[2:], spec.padding))

        def backward(g):
            g_g = g.reshape(B, G, c_out // G, P)
            if weight.requires_grad:
                dw = np.matmul(g_g, np.swapaxes(cols_g, -1, -2)).sum(axis=0)
                weight._send(dw.reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                bias._send(g.sum(axis=(0, 2, 3, 4)))
            if x.requires_grad:
                dcols = np.matmul(np.swapaxes(w_g, -1, -2), g_g).reshape(B, c_in * K, P)
                if pointwise:
                    x._send(dcols.reshape(x.shape))
                    return
                dxp = backend.col2vol(np.ascontiguousarray(dcols), c_in, *dims_p,
                                      kd, kh, kw, sd, sh, sw, od, oh, ow)
                x._send(dxp[:, :, pd:pd + x.shape[2], ph:ph + x.shape[3], pw:pw + x.shape[4]])

        out._backward = backward
    return out


def _conv_transpose3d(x, weight, bias, spec):
    B, c_in, D, H, W = x.shape
    G = spec.groups
    c_out = weight.shape[1] * G
    kd, kh, kw = spec.kernel_shape
    sd, sh, sw = spec.stride
    pd, ph, pw = spec.padding
    od, oh, ow = spec.output_dims((D, H, W))
    if min(od, oh, ow) < 1:
        raise DimensionError(f"transposed conv output would be empty: {(od, oh, ow)}")
    K = kd * kh * kw
    P = D * H * W
    full = ((D - 1) * sd + kd, (H - 1) * sh + kh, (W - 1) * sw + kw)

    x_g = x.data.reshape(B, G, c_in // G, P)
    w_g = weight.data.reshape(G, c_in // G, (c_out // G) * K)
    cols = np.matmul(np.swapaxes(w_g, -1, -2), x_g).reshape(B, c_out * K, P)
    yfull = backend.col2vol(np.ascontiguousarray(cols), c_out, *full,
                            kd, kh, kw, sd, sh, sw, D, H, W)
    y = yfull[:, :, pd:pd + od, ph:ph + oh, pw:pw + ow]
    if bias is not None:
        y = y + bias.data.reshape(1, c_out, 1, 1, 1)
    else:
        y = np.ascontiguousarray(y)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _make(y, parents, "conv_transpose3d")
    if out.requires_grad:

        def backward(g):
            if bias is not None and bias.requires_grad:
                bias._send(g.sum(axis=(0, 2, 3, 4)))
            gp = np.zeros((B, c_out) + full, dtype=g.dtype)
            gp[:, :, pd:pd + od, ph:ph + oh, pw:pw + ow] = g
            gcols = backend.vol2col(gp, kd, kh, kw, sd, sh, sw, D, H, W)
            gcols_g = gcols.reshape(B, G, (c_out // G) * K, P)
            if weight.requires_grad:
                dw = np.matmul(x_g, np.swapaxes(gcols_g, -1, -2)).sum(axis=0)
                weight._send(dw.reshape(weight.shape))
            if x.requires_grad:
                x._send(np.matmul(w_g, gcols_g).reshape(x.shape))

        out._backward = backward
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, stride=1, padding=0, groups=1) -> Tensor:
    """2D convolution of a (B, C, H, W) input via a depth-1 3D convolution."""
    s = (stride, stride) if isinstance(stride, int) else tuple(stride)
    p = (padding, padding) if isinstance(padding, int) else tuple(padding)
    B, C, H, W = x.shape
    w5 = reshape(weight, weight.shape[:2] + (1,) + weight.shape[2:])
    spec = ConvSpec(w5.shape[2:], (1, *s), (0, *p), groups)
    y = conv3d(reshape(x, (B, C, 1, H, W)), w5, bias, spec)
    return reshape(y, (B, y.shape[1]) + y.shape[3:])


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None, stride: int = 1, padding: int = 0,
           groups: int = 1) -> Tensor:
    """1D convolution of a (B, C, L) input via a 3D convolution."""
    B, C, L = x.shape
    w5 = reshape(weight, weight.shape[:2] + (1, 1, weight.shape[2]))
    spec = ConvSpec((1, 1, weight.shape[2]), (1, 1, stride), (0, 0, padding), groups)
    y = conv3d(reshape(x, (B, C, 1, 1, L)), w5, bias, spec)
    return reshape(y, (B, y.shape[1], y.shape[4]))
