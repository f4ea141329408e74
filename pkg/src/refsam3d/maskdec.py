"""Lightweight 3D mask decoder.

Two two-way transformer layers let the sparse prompt tokens and the
prompt-conditioned image tokens exchange information; four transposed 3D
convolutions then bring the map back to input resolution while adding
projected encoder stage features (multi-layer aggregation), and a final 3D
conv fuses the result with the raw volume into single-channel mask logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .crossmodal import CrossModalPrompt
from .errors import ConfigError, DimensionError
from .numerics import tensor as T
from .numerics.nn import MLP, Conv3d, LayerNorm, Module, MultiHeadAttention
from .numerics.tensor import Tensor


@dataclass
class DecoderConfig:
    num_upsample_layers: int = 4
    transformer_layers: int = 2
    mlam_enabled: bool = True
    fuse_with_input: bool = True
    num_heads: int = 4
    mlp_ratio: int = 2
    attention_downsample: int = 2
    min_channels: int = 8

    def violations(self) -> list[str]:
        out = []
        if self.num_upsample_layers != 4:
            out.append(f"decoder.num_upsample_layers must be 4, got {self.num_upsample_layers}")
        if self.transformer_layers < 0:
            out.append("decoder.transformer_layers must be >= 0")
        for name in ("num_heads", "mlp_ratio", "attention_downsample", "min_channels"):
            if getattr(self, name) < 1:
                out.append(f"decoder.{name} must be positive")
        return out


def upsample_strides(factors: Sequence[int], num_layers: int = 4) -> list[tuple[int, int, int]]:
    """Per-layer (d, h, w) strides whose product equals the patch downsampling factors."""
    doublings = []
    for axis, f in zip(("depth", "height", "width"), factors):
        n = int(round(np.log2(f))) if f > 0 else -1
        if f < 1 or 2**n != f or n > num_layers:
            raise ConfigError(
                f"{axis} downsampling factor {f} must be a power of two <= 2**{num_layers} "
                f"to be undone by {num_layers} stride-1/2 layers"
            )
        doublings.append(n)
    return [tuple(2 if j < n else 1 for n in doublings) for j in range(num_layers)]  # type: ignore


class TwoWayLayer(Module):
    """Pre-norm two-way attention: tokens attend to the image, the image attends back."""

    def __init__(self, dim: int, cfg: DecoderConfig, rng: np.random.Generator):
        inner = max(dim // cfg.attention_downsample, cfg.num_heads)
        self.norm_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(dim, cfg.num_heads, rng)
        self.norm_t2i_q = LayerNorm(dim)
        self.norm_t2i_k = LayerNorm(dim)
        self.t2i = MultiHeadAttention(dim, cfg.num_heads, rng, internal_dim=inner)
        self.norm_mlp = LayerNorm(dim)
        self.mlp = MLP(dim, cfg.mlp_ratio * dim, dim, rng)
        self.norm_i2t_q = LayerNorm(dim)
        self.norm_i2t_k = LayerNorm(dim)
        self.i2t = MultiHeadAttention(dim, cfg.num_heads, rng, internal_dim=inner)

    def forward(self, tokens: Tensor, keys: Tensor) -> tuple[Tensor, Tensor]:
        t = self.norm_self(tokens)
        tokens = tokens + self.self_attn(t)
        tokens = tokens + self.t2i(self.norm_t2i_q(tokens), self.norm_t2i_k(keys))
        tokens = tokens + self.mlp(self.norm_mlp(tokens))
        t = self.norm_i2t_k(tokens)
        keys = keys + self.i2t(self.norm_i2t_q(keys), t)
        return tokens, keys

    def identity_init(self) -> None:
        """Zero the image-side residual branch so the image tokens pass through unchanged."""
        self.i2t.out.weight.data[...] = 0.0
        self.i2t.out.bias.data[...] = 0.0


class MaskDecoder3D(Module):
    def __init__(self, dim: int, num_stages: int, patch_factors: Sequence[int], cfg: DecoderConfig,
                 rng: np.random.Generator, in_channels: int = 1):
        bad = cfg.violations()
        if bad:
            raise ConfigError("; ".join(bad))
        self.cfg = cfg
        self.layers = [TwoWayLayer(dim, cfg, rng) for _ in range(cfg.transformer_layers)]
        self.strides = upsample_strides(patch_factors, cfg.num_upsample_layers)
        widths = [dim]
        for j in range(cfg.num_upsample_layers):
            widths.append(max(dim >> (j + 1), cfg.min_channels))
        self.widths = widths
        self.up = []
        for j, stride in enumerate(self.strides):
            kernel = tuple(2 if s == 2 else 3 for s in stride)
            padding = tuple(0 if s == 2 else 1 for s in stride)
            self.up.append(Conv3d(widths[j], widths[j + 1], kernel, rng, stride=stride,
                                  padding=padding, transposed=True))
        # Layer j consumes stage N - j: deepest features at the coarsest scale.
        self.skip_stage = [num_stages - j if num_stages - j >= 1 else None
                           for j in range(cfg.num_upsample_layers)]
        self.skip_proj = [Conv3d(dim, widths[j + 1], 1, rng) if s is not None else None
                          for j, s in enumerate(self.skip_stage)]
        self.skip_proj = [p for p in self.skip_proj if p is not None]
        fuse_in = widths[-1] + (in_channels if cfg.fuse_with_input else 0)
        self.fuse = Conv3d(fuse_in, 1, 3, rng, padding=1)

    def identity_init(self) -> None:
        for layer in self.layers:
            layer.identity_init()

    def forward(self, embedding: Tensor, prompt: CrossModalPrompt, skips: Sequence[Tensor],
                original: Tensor) -> Tensor:
        x = decode_tokens(embedding, prompt, self.layers)
        x = progressive_upsample(x, skips, self)
        return final_fuse(x, original, self)


def decode_tokens(image_embedding: Tensor, prompt: CrossModalPrompt,
                  layers: Sequence[TwoWayLayer]) -> Tensor:
    """Add the dense prompt to the image embedding and run the two-way layers."""
    if image_embedding.shape != prompt.dense.shape:
        raise DimensionError(
            f"dense prompt {prompt.dense.shape} does not match image embedding {image_embedding.shape}"
        )
    B, C, D, H, W = image_embedding.shape
    src = image_embedding + prompt.dense
    keys = T.reshape(T.transpose(src, (0, 2, 3, 4, 1)), (B, D * H * W, C))
    tokens = prompt.sparse
    for layer in layers:
        tokens, keys = layer(tokens, keys)
    return T.transpose(T.reshape(keys, (B, D, H, W, C)), (0, 4, 1, 2, 3))


def progressive_upsample(features: Tensor, skips: Sequence[Tensor], dec: MaskDecoder3D) -> Tensor:
    """Four transposed convs; after each, add the matching projected stage feature (MLAM)."""
    x = features
    proj_iter = iter(dec.skip_proj)
    scale = np.ones(3, dtype=int)
    for j, conv in enumerate(dec.up):
        x = T.gelu(conv(x))
        scale *= dec.strides[j]
        stage = dec.skip_stage[j]
        if stage is None:
            continue
        proj = next(proj_iter)
        if not dec.cfg.mlam_enabled:
            continue
        skip = skips[stage - 1]
        x = x + T.upsample_nearest(proj(skip), tuple(int(s) for s in scale))
    return x


def final_fuse(upsampled: Tensor, original: Tensor, dec: MaskDecoder3D) -> Tensor:
    """Concatenate with the raw volume along channels, then one 3D conv to mask logits."""
    if dec.cfg.fuse_with_input:
        if upsampled.shape[2:] != original.shape[2:]:
            raise DimensionError(
                f"upsampled map {upsampled.shape[2:]} does not match volume {original.shape[2:]}"
            )
        upsampled = T.concat([upsampled, original], axis=1)
    return dec.fuse(upsampled)
