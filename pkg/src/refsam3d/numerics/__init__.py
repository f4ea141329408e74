"""Minimal differentiable tensor kernel."""

from . import backend
from .conv import ConvSpec, conv1d, conv2d, conv3d
from .gradcheck import GradCheckReport, grad_check
from .nn import Conv3d, LayerNorm, Linear, MLP, Module, Parameter, count_parameters
from .tensor import (
    Tensor,
    add,
    bce_with_logits,
    concat,
    exp,
    gelu,
    layernorm,
    linear,
    log,
    matmul,
    no_grad,
    pad,
    relu,
    reshape,
    sigmoid,
    softmax,
    stack,
    tanh,
    transpose,
    upsample_nearest,
)

__all__ = [
    "ConvSpec", "Conv3d", "GradCheckReport", "LayerNorm", "Linear", "MLP", "Module",
    "Parameter", "Tensor", "add", "backend", "bce_with_logits", "concat", "conv1d", "conv2d",
    "conv3d", "count_parameters", "exp", "gelu", "grad_check", "layernorm", "linear", "log",
    "matmul", "no_grad", "pad", "relu", "reshape", "sigmoid", "softmax", "stack", "tanh",
    "transpose", "upsample_nearest",
]
