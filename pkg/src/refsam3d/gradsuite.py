"""Gradient checks for every differentiable operation and for the full model loss.

Each case builds a scalar objective ``sum(op(inputs) * R)`` with a fixed random
weight ``R`` so that every output entry contributes a distinct gradient, then
compares reverse mode against central differences in float64.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import crossmodal, encoder3d
from .encoder3d import EncoderConfig, TokenGrid
from .maskdec import DecoderConfig
from .numerics import tensor as T
from .numerics.conv import ConvSpec, conv1d, conv2d, conv3d
from .numerics.gradcheck import GradCheckReport, grad_check
from .numerics.nn import Linear, MultiHeadAttention, attention
from .numerics.tensor import Tensor

Case = Callable[[np.random.Generator], tuple[Callable[[], Tensor], dict[str, Tensor]]]


@dataclass
class SuiteResult:
    name: str
    report: GradCheckReport
    seconds: float


def _t(rng, *shape, low=-1.0, high=1.0) -> Tensor:
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


# Scalar probe sum(y * R) with a fixed random R, so every output entry gets a distinct weight.
def _weighted(out_fn, rng):
    cache = {}

    def f():
        y = out_fn()
        if "R" not in cache:
            cache["R"] = rng.normal(size=y.shape)
        return (y * cache["R"]).sum()

    return f


def _unary(op, low=-2.0, high=2.0):
    def case(rng):
        x = _t(rng, 3, 4, low=low, high=high)
        return _weighted(lambda: op(x), rng), {"x": x}
    return case


def _binary(op, low=-2.0, high=2.0, bshape=(3, 4)):
    def case(rng):
        a = _t(rng, 3, 4, low=low, high=high)
        b = _t(rng, *bshape, low=low, high=high)
        return _weighted(lambda: op(a, b), rng), {"a": a, "b": b}
    return case


def _conv_case(shape, spec: ConvSpec, c_out):
    def case(rng):
        x = _t(rng, *shape)
        w = _t(rng, *spec.weight_shape(shape[1], c_out))
        b = _t(rng, c_out)
        return _weighted(lambda: conv3d(x, w, b, spec), rng), {"x": x, "w": w, "b": b}
    return case


def _conv2d(rng):
    x, w, b = _t(rng, 1, 2, 5, 4), _t(rng, 3, 2, 3, 3), _t(rng, 3)
    return _weighted(lambda: conv2d(x, w, b, stride=2, padding=1), rng), {"x": x, "w": w, "b": b}


def _conv1d(rng):
    x, w, b = _t(rng, 1, 2, 6), _t(rng, 2, 2, 3), _t(rng, 2)
    return _weighted(lambda: conv1d(x, w, b, padding=1), rng), {"x": x, "w": w, "b": b}


def _layernorm(rng):
    x, g, b = _t(rng, 2, 3, 5), _t(rng, 5), _t(rng, 5)
    return _weighted(lambda: T.layernorm(x, g, b), rng), {"x": x, "gamma": g, "beta": b}


def _linear(rng):
    x, W, b = _t(rng, 2, 3, 4), _t(rng, 4, 5), _t(rng, 5)
    return _weighted(lambda: T.linear(x, W, b), rng), {"x": x, "W": W, "b": b}


def _bce(rng):
    x = _t(rng, 2, 1, 2, 3, 3, low=-3, high=3)
    target = (rng.random(x.shape) < 0.4).astype(float)
    return (lambda: T.bce_with_logits(x, target)), {"logits": x}


def _getitem_basic(rng):
    x = _t(rng, 4, 5, 3)
    return _weighted(lambda: x[1:3, ::2, -1], rng), {"x": x}


def _getitem_advanced(rng):
    x = _t(rng, 4, 5)
    idx = np.array([0, 2, 2, 3])
    return _weighted(lambda: x[idx], rng), {"x": x}


def _concat(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 4)
    return _weighted(lambda: T.concat([a, b], axis=1), rng), {"a": a, "b": b}


def _stack(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)
    return _weighted(lambda: T.stack([a, b], axis=1), rng), {"a": a, "b": b}


def _pad(rng):
    x = _t(rng, 2, 3, 2)
    return _weighted(lambda: T.pad(x, ((0, 1), (2, 0), (1, 1))), rng), {"x": x}


def _broadcast(rng):
    x = _t(rng, 3, 1)
    return _weighted(lambda: T.broadcast_to(x, (2, 3, 4)), rng), {"x": x}


def _upsample(rng):
    x = _t(rng, 1, 2, 2, 1, 3)
    return _weighted(lambda: T.upsample_nearest(x, (2, 3, 1)), rng), {"x": x}


def _matmul_batched(rng):
    a, b = _t(rng, 2, 3, 4), _t(rng, 4, 5)
    return _weighted(lambda: T.matmul(a, b), rng), {"a": a, "b": b}


def _attention(rng):
    q, k, v = _t(rng, 2, 3, 4), _t(rng, 2, 5, 4), _t(rng, 2, 5, 4)
    return _weighted(lambda: attention(q, k, v), rng), {"q": q, "k": k, "v": v}


def _mha(rng):
    mha = MultiHeadAttention(8, 2, rng)
    x = _t(rng, 2, 5, 8)
    params = {"x": x, **dict(mha.named_parameters())}
    return _weighted(lambda: mha(x), rng), params


def _window_roundtrip(rng):
    x = _t(rng, 1, 3 * 4 * 5, 2)
    dims = (3, 4, 5)

    def f():
        w, layout = encoder3d.window_partition(x, dims, (2, 2, 2))
        return encoder3d.window_merge(w * w, dims, layout)

    return _weighted(f, rng), {"x": x}


def _adapter(rng):
    ad = encoder3d.Adapter3D(6, 2, 3, rng)
    ad.up.weight.data[...] = rng.normal(size=ad.up.weight.shape)
    x = _t(rng, 1, 2 * 3 * 2, 6)
    return _weighted(lambda: ad(x, (2, 3, 2)), rng), {"x": x, **dict(ad.named_parameters())}


def _patch_and_position(rng):
    cfg = EncoderConfig(embed_dim=4, patch_k=2, depth_patch=2, num_stages=1, window=(2, 2, 2),
                        adapter_rank=2, num_heads=2, volume_shape=(4, 4, 4))
    pe = encoder3d.PatchEmbed3D(cfg, rng)
    pos = encoder3d.PositionEncoding3D(cfg, rng)
    pos.d_table.data[...] = rng.normal(size=pos.d_table.shape)
    vol = _t(rng, 1, 1, 4, 4, 4)
    params = {"volume": vol, **{f"patch.{k}": p for k, p in pe.named_parameters()},
              **{f"pos.{k}": p for k, p in pos.named_parameters()}}
    return _weighted(lambda: pos(pe(vol)).tokens, rng), params


def _bottleneck(rng):
    neck = encoder3d.Bottleneck3D(3, 3, rng)
    x = _t(rng, 1, 2 * 2 * 3, 3)
    return _weighted(lambda: neck(TokenGrid(x, (2, 2, 3))), rng), {"x": x, **dict(neck.named_parameters())}


def _cross_attention(rng):
    q, k, v = Linear(4, 4, rng), Linear(4, 4, rng), Linear(4, 4, rng)
    V = _t(rng, 2, 3, 4)
    text = _t(rng, 5, 4)
    params = {"V": V, "text": text, **{f"{n}.{k}": p for n, m in (("q", q), ("k", k), ("v", v))
                                        for k, p in m.named_parameters()}}
    f = lambda: crossmodal.cross_attention_stage(V, crossmodal.ProjectedText(text), q, k, v)  # noqa: E731
    return _weighted(f, rng), params


def _fuse_and_prompt(rng):
    outs = [_t(rng, 1, 8, 3) for _ in range(3)]
    w = _t(rng, 3)
    queries = _t(rng, 2, 3)

    def f():
        fused = crossmodal.fuse_stages(outs, w)
        p = crossmodal.to_prompt(fused, (2, 2, 2), queries)
        return T.concat([T.reshape(p.sparse, (-1,)), T.reshape(p.dense, (-1,))], axis=0)

    params = {f"O{i}": o for i, o in enumerate(outs)}
    params.update(weights=w, queries=queries)
    return _weighted(f, rng), params


def _projector(rng):
    proj = crossmodal.CrossModalProjector(4, 4, rng)
    x = _t(rng, 3, 4)
    return _weighted(lambda: proj(x).tokens, rng), {"x": x, **dict(proj.named_parameters())}


def _seg_loss(rng):
    from .pipeline.loss import loss

    x = _t(rng, 2, 1, 3, 3, 2, low=-3, high=3)
    mask = (rng.random(x.shape) < 0.3).astype(np.uint8)
    return (lambda: loss(x, mask)), {"logits": x}


def small_model_config(volume: int = 8):
    """A tiny float64 model on ``volume``^3 inputs, cheap enough for finite differences."""
    from .pipeline.config import ModelConfig, PromptConfig, TextConfig

    enc = EncoderConfig(embed_dim=8, patch_k=2, depth_patch=2, num_stages=2, window=(2, 2, 2),
                        adapter_rank=2, num_heads=2, mlp_ratio=2, volume_shape=(volume,) * 3)
    dec = DecoderConfig(transformer_layers=1, num_heads=2, mlp_ratio=1, min_channels=2)
    return ModelConfig(encoder=enc, decoder=dec, text=TextConfig(c_e=8, c_v=8, depth=1, heads=2, max_len=8),
                       prompt=PromptConfig(num_sparse=2))


def _full_model(rng):
    from .pipeline.loss import loss
    from .pipeline.model import build_model

    model = build_model(small_model_config(8))
    # Give zero-initialised branches random values so every path carries gradient.
    for name, p in model.named_parameters():
        if not np.any(p.data):
            p.data[...] = rng.normal(0.0, 0.1, size=p.shape)
    vol = rng.uniform(0, 1, size=(1, 1, 8, 8, 8))
    mask = np.zeros((1, 1, 8, 8, 8), dtype=np.uint8)
    mask[0, 0, 2:6, 3:7, 1:5] = 1
    f = lambda: loss(model(vol, "segment the sphere"), mask)  # noqa: E731
    return f, dict(model.named_parameters())


OPERATION_CASES: dict[str, Case] = {
    "add": _binary(lambda a, b: a + b, bshape=(4,)),
    "sub": _binary(lambda a, b: a - b, bshape=(3, 1)),
    "mul": _binary(lambda a, b: a * b),
    "div": _binary(lambda a, b: a / b, low=0.5, high=2.0),
    "power": _unary(lambda x: T.power(x, 3.0)),
    "exp": _unary(T.exp),
    "log": _unary(T.log, low=0.2, high=3.0),
    "tanh": _unary(T.tanh),
    "sigmoid": _unary(T.sigmoid),
    "relu": _unary(T.relu),
    "gelu": _unary(T.gelu),
    "sum": _unary(lambda x: T.tsum(x, axis=1, keepdims=True)),
    "mean": _unary(lambda x: T.mean(x, axis=0)),
    "reshape": _unary(lambda x: T.reshape(x, (2, 6))),
    "transpose": _unary(lambda x: T.transpose(x, (1, 0))),
    "getitem_basic": _getitem_basic,
    "getitem_advanced": _getitem_advanced,
    "concat": _concat,
    "stack": _stack,
    "expand_dims": _unary(lambda x: T.expand_dims(x, 1)),
    "pad": _pad,
    "broadcast_to": _broadcast,
    "upsample_nearest": _upsample,
    "matmul": _matmul_batched,
    "linear": _linear,
    "softmax": _unary(lambda x: T.softmax(x, axis=-1)),
    "layernorm": _layernorm,
    "bce_with_logits": _bce,
    "conv3d": _conv_case((1, 2, 4, 5, 3), ConvSpec((3, 2, 3), (1, 2, 1), (1, 0, 1)), 3),
    "conv3d_grouped": _conv_case((1, 4, 3, 3, 3), ConvSpec((3, 3, 3), (1, 1, 1), (1, 1, 1), groups=2), 2),
    "conv3d_depthwise": _conv_case((1, 3, 3, 4, 3), ConvSpec((3, 1, 1), (1, 1, 1), (1, 0, 0), groups=3), 3),
    "conv3d_pointwise": _conv_case((2, 3, 2, 2, 2), ConvSpec((1, 1, 1)), 2),
    "conv_transpose3d": _conv_case((1, 3, 2, 3, 2), ConvSpec((2, 2, 3), (2, 2, 1), (0, 0, 1), transposed=True), 2),
    "conv2d": _conv2d,
    "conv1d": _conv1d,
    "attention": _attention,
    "multi_head_attention": _mha,
    "window_partition_merge": _window_roundtrip,
    "adapter": _adapter,
    "patch_embed_position": _patch_and_position,
    "bottleneck": _bottleneck,
    "cross_attention_stage": _cross_attention,
    "fuse_stages_to_prompt": _fuse_and_prompt,
    "projector": _projector,
    "segmentation_loss": _seg_loss,
}


def run_suite(tolerance: float = 1e-4, include_model: bool = True, model_entries: int | None = 4,
              seed: int = 0, eps: float = 1e-5) -> list[SuiteResult]:
    """Run every case; the full-model case samples ``model_entries`` entries per parameter."""
    cases = dict(OPERATION_CASES)
    if include_model:
        cases["full_model_loss_8^3"] = _full_model
    results = []
    for i, (name, case) in enumerate(cases.items()):
        rng = np.random.default_rng([seed, i])
        t0 = time.perf_counter()
        f, params = case(rng)
        entries = model_entries if name.startswith("full_model") else None
        report = grad_check(f, params, eps=eps, tolerance=tolerance, max_entries=entries, seed=seed)
        results.append(SuiteResult(name, report, time.perf_counter() - t0))
    return results
