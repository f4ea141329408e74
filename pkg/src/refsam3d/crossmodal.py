"""Text/image fusion that produces the cross-modal segmentation prompt.

Per-word text embeddings are projected into the image token space, every
encoder stage attends to the projected words, the per-stage outputs are mixed
with learned convex weights, and the fused map becomes a dense prompt plus a
few attention-pooled sparse prompt tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoder3d import EncoderOutput, TokenGrid
from .errors import DimensionError, InputError, RefSAM3DError
from .numerics import tensor as T
from .numerics.nn import Linear, Module, Parameter
from .numerics.tensor import Tensor


@dataclass
class ProjectedText:
    tokens: Tensor  # (L, C_v)


@dataclass
class StageFeatures:
    features: list[Tensor]  # each (B, M_i, C)
    dims: list[tuple[int, int, int]]

    def __len__(self) -> int:
        return len(self.features)


@dataclass
class CrossModalPrompt:
    fused: Tensor  # (B, M, C)
    sparse: Tensor  # (B, S, C)
    dense: Tensor  # (B, C, D_t, H_t, W_t)


class CrossModalProjector(Module):
    """Per-word two-layer MLP C_e -> hidden -> C_v.

    When C_e == C_v the MLP is residual, so zeroing the last layer gives the
    identity map.
    """

    def __init__(self, c_e: int, c_v: int, rng: np.random.Generator, hidden: int | None = None):
        hidden = hidden or c_v
        self.fc1 = Linear(c_e, hidden, rng)
        self.fc2 = Linear(hidden, c_v, rng)
        self.residual = c_e == c_v

    def forward(self, F_e: Tensor) -> ProjectedText:
        return project_text(F_e, self)

    def identity_init(self) -> None:
        if not self.residual:
            raise DimensionError("identity init needs C_e == C_v")
        self.fc2.weight.data[...] = 0.0
        self.fc2.bias.data[...] = 0.0


def project_text(F_e: Tensor, mlp: CrossModalProjector) -> ProjectedText:
    if F_e.ndim != 2 or F_e.shape[1] != mlp.fc1.weight.shape[0]:
        raise DimensionError(
            f"projector expects (L, {mlp.fc1.weight.shape[0]}) word embeddings, got {F_e.shape}"
        )
    out = mlp.fc2(T.gelu(mlp.fc1(F_e)))
    if mlp.residual:
        out = out + F_e
    return ProjectedText(out)


def pad_text(F_e: Tensor, c_v: int) -> ProjectedText:
    """Unaligned stand-in for the projector: zero-pad (or cut) words to C_v."""
    c_e = F_e.shape[1]
    if c_e >= c_v:
        return ProjectedText(F_e[:, :c_v])
    return ProjectedText(T.pad(F_e, ((0, 0), (0, c_v - c_e))))


def collect_features(trace: EncoderOutput | Sequence[TokenGrid], num_stages: int | None = None) -> StageFeatures:
    """Stage outputs V'_1..V'_N of the encoder in stage order."""
    stages = trace.stages if isinstance(trace, EncoderOutput) else list(trace)
    if not stages or (num_stages is not None and len(stages) != num_stages):
        raise RefSAM3DError(
            f"encoder trace incomplete: expected {num_stages} stages, got {len(stages)}"
        )
    return StageFeatures([g.tokens for g in stages], [g.dims for g in stages])


def cross_attention_stage(V_i: Tensor, text: ProjectedText, q_proj: Linear, k_proj: Linear,
                          v_proj: Linear) -> Tensor:
    """O_i = softmax(Q_i K^T / sqrt(d_k)) V_text with Q from image tokens, K and V from words."""
    L = text.tokens.shape[0]
    if L == 0:
        raise InputError("cross-attention needs at least one text token")
    if V_i.shape[-1] != q_proj.weight.shape[0] or text.tokens.shape[-1] != k_proj.weight.shape[0]:
        raise DimensionError(
            f"cross-attention width mismatch: image {V_i.shape[-1]}, text {text.tokens.shape[-1]}"
        )
    Q = q_proj(V_i)  # (B, M, C)
    K = k_proj(text.tokens)  # (L, C)
    V = v_proj(text.tokens)  # (L, C)
    d_k = Q.shape[-1]
    A = T.softmax(T.matmul(Q, K.T) * (1.0 / np.sqrt(d_k)), axis=-1)  # (B, M, L)
    return T.matmul(A, V)


def fuse_stages(stage_outputs: Sequence[Tensor], weights: Tensor) -> Tensor:
    """Sum_i softmax(weights)_i * O_i."""
    if len(stage_outputs) != weights.shape[0]:
        raise DimensionError(f"{len(stage_outputs)} stage outputs but {weights.shape[0]} weights")
    shape = stage_outputs[0].shape
    for i, o in enumerate(stage_outputs):
        if o.shape != shape:
            raise DimensionError(f"stage {i + 1} output {o.shape} differs from stage 1 {shape}")
    w = T.softmax(weights, axis=0)
    out = stage_outputs[0] * w[0]
    for i in range(1, len(stage_outputs)):
        out = out + stage_outputs[i] * w[i]
    return out


def to_prompt(fused: Tensor, grid_dims, queries: Tensor) -> CrossModalPrompt:
    """Dense prompt = fused map reshaped to 5D; sparse = attention pooling with learned queries."""
    B, M, C = fused.shape
    D, H, W = grid_dims
    if M != D * H * W:
        raise DimensionError(f"fused prompt has {M} tokens, grid {tuple(grid_dims)} needs {D * H * W}")
    dense = T.transpose(T.reshape(fused, (B, D, H, W, C)), (0, 4, 1, 2, 3))
    scores = T.matmul(queries, T.transpose(fused, (0, 2, 1))) * (1.0 / np.sqrt(C))  # (B, S, M)
    sparse = T.matmul(T.softmax(scores, axis=-1), fused)
    return CrossModalPrompt(fused, sparse, dense)


class HierarchicalCrossAttention(Module):
    """Per-stage query projections, shared text key/value projections, fusion weights, pooling queries."""

    def __init__(self, dim: int, num_stages: int, num_sparse: int, rng: np.random.Generator,
                 stages_used: Sequence[int] | None = None):
        self.q = [Linear(dim, dim, rng) for _ in range(num_stages)]
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.stages_used = tuple(range(1, num_stages + 1)) if stages_used is None else tuple(stages_used)
        bad = [s for s in self.stages_used if not 1 <= s <= num_stages]
        if bad or not self.stages_used:
            raise DimensionError(f"stages_used {self.stages_used} outside 1..{num_stages}")
        self.fusion = Parameter(np.zeros(len(self.stages_used)))
        self.queries = Parameter(rng.normal(0.0, 0.02, size=(num_sparse, dim)))

    def forward(self, features: StageFeatures, text: ProjectedText) -> CrossModalPrompt:
        outs = [cross_attention_stage(features.features[s - 1], text, self.q[s - 1], self.k, self.v)
                for s in self.stages_used]
        fused = fuse_stages(outs, self.fusion)
        return to_prompt(fused, features.dims[-1], self.queries)

    def zero_prompt(self, batch: int, dims, dtype) -> CrossModalPrompt:
        """Text-free prompt: all-zero fused map and sparse tokens."""
        C = self.k.weight.shape[1]
        M = int(np.prod(dims))
        fused = Tensor(np.zeros((batch, M, C), dtype=dtype))
        return to_prompt(fused, dims, Tensor(np.zeros((self.queries.shape[0], C), dtype=dtype)))
