"""Model assembly and the end-to-end forward pass."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..crossmodal import (
    CrossModalPrompt,
    CrossModalProjector,
    HierarchicalCrossAttention,
    ProjectedText,
    collect_features,
    pad_text,
)
from ..encoder3d import ImageEncoder3D
from ..errors import RefSAM3DError
from ..maskdec import MaskDecoder3D
from ..numerics import tensor as T
from ..numerics.nn import Module, count_parameters
from ..numerics.tensor import Tensor
from ..textenc import TextEncoder, Vocabulary, default_vocab, tokenize
from .config import ModelConfig


class RefSAM3D(Module):
    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.train.seed)
        enc = cfg.encoder
        self.vocab = Vocabulary.load(cfg.text.vocab) if cfg.text.vocab else default_vocab()
        self.encoder = ImageEncoder3D(enc, rng)
        self.text_encoder = TextEncoder(len(self.vocab), cfg.text.c_e, rng, cfg.text.max_len,
                                        cfg.text.depth, cfg.text.heads, cfg.text.pooling)
        self.projector = CrossModalProjector(cfg.text.c_e, cfg.text.c_v, rng)
        self.hca = HierarchicalCrossAttention(enc.embed_dim, enc.num_stages, cfg.prompt.num_sparse,
                                              rng, cfg.prompt.stages or None)
        self.decoder = MaskDecoder3D(enc.embed_dim, enc.num_stages,
                                     (enc.depth_patch, enc.patch_k, enc.patch_k), cfg.decoder, rng,
                                     in_channels=enc.in_channels)

    @property
    def dtype(self):
        return self.encoder.patch.proj2d.weight.dtype

    def census(self) -> dict[str, int]:
        return count_parameters(self)

    # ------------------------------------------------------------------ text path
    def text_tokens(self, prompt: str) -> ProjectedText:
        seq = tokenize(prompt, self.vocab, self.cfg.text.max_len)
        F_e = self.text_encoder(seq)
        if self.cfg.prompt.use_projector:
            return self.projector(F_e)
        return pad_text(F_e, self.cfg.text.c_v)

    def make_prompt(self, features, prompts: Sequence[str], batch: int) -> CrossModalPrompt:
        if not self.cfg.prompt.use_text:
            return self.hca.zero_prompt(batch, features.dims[-1], self.dtype)
        if len(set(prompts)) == 1:
            return self.hca(features, self.text_tokens(prompts[0]))
        parts = []
        for b, p in enumerate(prompts):
            sub = type(features)([f[b:b + 1] for f in features.features], features.dims)
            parts.append(self.hca(sub, self.text_tokens(p)))
        return CrossModalPrompt(*(T.concat([getattr(q, name) for q in parts], axis=0)
                                  for name in ("fused", "sparse", "dense")))

    # ------------------------------------------------------------------ forward
    def forward(self, volume, prompts: str | Sequence[str]) -> Tensor:
        """Mask logits of shape (B, 1, D, H, W) for a (B, C_in, D, H, W) volume."""
        if not isinstance(volume, Tensor):
            volume = Tensor(np.asarray(volume, dtype=self.dtype))
        elif volume.dtype != self.dtype:
            volume = Tensor(volume.data.astype(self.dtype))
        if volume.ndim == 4:
            volume = T.reshape(volume, (1, *volume.shape))
        B = volume.shape[0]
        prompts = [prompts] * B if isinstance(prompts, str) else list(prompts)
        if len(prompts) != B:
            raise RefSAM3DError(f"{len(prompts)} prompts for a batch of {B}")
        stage = "encoder"
        try:
            enc_out = self.encoder(volume)
            stage = "cross-modal prompt"
            features = collect_features(enc_out, self.cfg.encoder.num_stages)
            prompt = self.make_prompt(features, prompts, B)
            stage = "mask decoder"
            skips = [g.to_dense() for g in enc_out.stages]
            return self.decoder(enc_out.embedding, prompt, skips, volume)
        except RefSAM3DError as exc:
            raise type(exc)(f"{stage}: {exc}") from exc


def build_model(cfg: ModelConfig, dtype=np.float64) -> RefSAM3D:
    """Seeded model construction; parameters tagged frozen/trainable by origin."""
    model = RefSAM3D(cfg)
    if np.dtype(dtype) != np.float64:
        model.astype(dtype)
    return model


def forward(model: RefSAM3D, volume, prompt_text) -> Tensor:
    return model(volume, prompt_text)
