"""3D-adapted image encoder.

The encoder turns a (B, C_in, D, H, W) volume into a token grid with a
factorized patch embedding (frozen 1 x k x k conv followed by a trainable
depthwise k x 1 x 1 conv), adds a frozen (h, w) plus trainable d positional
table, runs windowed 3D attention blocks carrying adapters, and maps the last
grid through a two-conv 3D bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import tensor as T
from .numerics.nn import MLP, Conv3d, LayerNorm, Linear, Module, MultiHeadAttention, Parameter
from .numerics.tensor import Tensor


@dataclass
class EncoderConfig:
    embed_dim: int = 64
    patch_k: int = 4
    depth_patch: int = 4
    num_stages: int = 4
    blocks_per_stage: int = 1
    window: tuple[int, int, int] = (4, 4, 4)
    window_shift: bool = False
    adapter_rank: int = 8
    adapter_kernel: int = 3
    adapters: bool = True
    num_heads: int = 4
    mlp_ratio: int = 4
    in_channels: int = 1
    volume_shape: tuple[int, int, int] = (32, 32, 32)

    def violations(self) -> list[str]:
        out = []
        if self.embed_dim % self.num_heads:
            out.append(f"encoder.embed_dim={self.embed_dim} not divisible by num_heads={self.num_heads}")
        if not 0 < self.adapter_rank < self.embed_dim:
            out.append(f"encoder.adapter_rank={self.adapter_rank} must be in (0, embed_dim)")
        for name in ("patch_k", "depth_patch", "num_stages", "blocks_per_stage", "num_heads",
                     "in_channels", "mlp_ratio", "adapter_kernel"):
            if getattr(self, name) < 1:
                out.append(f"encoder.{name} must be positive")
        if len(self.window) != 3 or min(self.window) < 1:
            out.append(f"encoder.window={self.window} must be three positive ints")
        if self.window_shift:
            out.append("encoder.window_shift is not supported (plain windows only)")
        if self.adapter_kernel % 2 == 0:
            out.append("encoder.adapter_kernel must be odd")
        D, H, W = self.volume_shape
        if D % self.depth_patch or H % self.patch_k or W % self.patch_k:
            out.append(
                f"encoder.volume_shape={self.volume_shape} must be multiples of "
                f"({self.depth_patch}, {self.patch_k}, {self.patch_k})"
            )
        return out

    def validate(self) -> None:
        bad = self.violations()
        if bad:
            raise ConfigError("; ".join(bad))

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        D, H, W = self.volume_shape
        return (D // self.depth_patch, H // self.patch_k, W // self.patch_k)


@dataclass
class TokenGrid:
    """Tokens of shape (B, D_t * H_t * W_t, C) together with their grid dims."""

    tokens: Tensor
    dims: tuple[int, int, int]

    def __post_init__(self):
        n = int(np.prod(self.dims))
        if self.tokens.ndim != 3 or self.tokens.shape[1] != n:
            raise DimensionError(
                f"token count {self.tokens.shape[1] if self.tokens.ndim == 3 else self.tokens.shape} "
                f"does not match grid {self.dims} ({n} tokens)"
            )

    @property
    def channels(self) -> int:
        return self.tokens.shape[2]

    def to_dense(self) -> Tensor:
        """(B, N, C) -> (B, C, D, H, W)."""
        B, _, C = self.tokens.shape
        x = T.reshape(self.tokens, (B, *self.dims, C))
        return T.transpose(x, (0, 4, 1, 2, 3))

    @classmethod
    def from_dense(cls, x: Tensor) -> "TokenGrid":
        B, C, D, H, W = x.shape
        t = T.transpose(x, (0, 2, 3, 4, 1))
        return cls(T.reshape(t, (B, D * H * W, C)), (D, H, W))


# --------------------------------------------------------------------------- patch embedding
class PatchEmbed3D(Module):
    """Frozen 1 x k x k conv (pretrained 2D weights) then depthwise k_d x 1 x 1 conv."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        k, kd, C = cfg.patch_k, cfg.depth_patch, cfg.embed_dim
        self.cfg = cfg
        self.proj2d = Conv3d(cfg.in_channels, C, (1, k, k), rng, stride=(1, k, k),
                             origin="pretrained-2d")
        self.depth = Conv3d(C, C, (kd, 1, 1), rng, stride=(kd, 1, 1), groups=C, origin="new-3d")

    def forward(self, volume: Tensor) -> TokenGrid:
        if volume.ndim != 5:
            raise DimensionError(f"volume must be (B, C, D, H, W), got {volume.shape}")
        _, c_in, D, H, W = volume.shape
        if c_in != self.cfg.in_channels:
            raise DimensionError(f"channel axis: expected {self.cfg.in_channels}, got {c_in}")
        k, kd = self.cfg.patch_k, self.cfg.depth_patch
        bad = [f"{name}={n} (multiple of {m} required)"
               for name, n, m in (("depth", D, kd), ("height", H, k), ("width", W, k)) if n % m]
        if bad:
            raise DimensionError("volume dims not divisible by patch size: " + ", ".join(bad))
        return TokenGrid.from_dense(self.depth(self.proj2d(volume)))


def patch_embed(volume: Tensor, embed: PatchEmbed3D) -> TokenGrid:
    return embed(volume)


# --------------------------------------------------------------------------- positions
class PositionEncoding3D(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        gd, gh, gw = cfg.grid_shape
        C = cfg.embed_dim
        self.hw_table = Parameter(rng.normal(0.0, 0.02, size=(gh, gw, C)), "pretrained-2d")
        self.d_table = Parameter(np.zeros((gd, C)), "new-3d")

    def forward(self, grid: TokenGrid) -> TokenGrid:
        return position_encode(grid, self.hw_table, self.d_table)


def position_encode(grid: TokenGrid, hw_table: Tensor, d_table: Tensor) -> TokenGrid:
    """token(d, h, w) + hw_table[h, w] + d_table[d]."""
    D, H, W = grid.dims
    if hw_table.shape[0] < H or hw_table.shape[1] < W or d_table.shape[0] < D:
        raise ConfigError(
            f"position tables (d={d_table.shape[0]}, h={hw_table.shape[0]}, w={hw_table.shape[1]}) "
            f"smaller than grid {grid.dims}"
        )
    B, N, C = grid.tokens.shape
    hw = hw_table if hw_table.shape[:2] == (H, W) else hw_table[:H, :W]
    dd = d_table if d_table.shape[0] == D else d_table[:D]
    x = T.reshape(grid.tokens, (B, D, H, W, C))
    x = x + T.reshape(hw, (1, 1, H, W, C)) + T.reshape(dd, (1, D, 1, 1, C))
    return TokenGrid(T.reshape(x, (B, N, C)), grid.dims)


# --------------------------------------------------------------------------- adapter
class Adapter3D(Module):
    """X + Act(DWConv3d(X W_down)) W_up."""

    def __init__(self, dim: int, rank: int, kernel: int, rng: np.random.Generator):
        self.down = Linear(dim, rank, rng, origin="adapter")
        self.dw = Conv3d(rank, rank, kernel, rng, padding=kernel // 2, groups=rank, origin="adapter")
        self.up = Linear(rank, dim, rng, origin="adapter", zero=True)

    def forward(self, x: Tensor, dims: tuple[int, int, int]) -> Tensor:
        return adapter_apply(x, self.down, self.up, self.dw, dims)


def adapter_apply(X: Tensor, down: Linear, up: Linear, dw: Conv3d, grid_dims) -> Tensor:
    B, N, _ = X.shape
    D, H, W = grid_dims
    if N != D * H * W:
        raise DimensionError(f"adapter: {N} tokens inconsistent with grid {tuple(grid_dims)}")
    h = down(X)
    r = h.shape[-1]
    h = T.transpose(T.reshape(h, (B, D, H, W, r)), (0, 4, 1, 2, 3))
    h = dw(h)
    h = T.reshape(T.transpose(h, (0, 2, 3, 4, 1)), (B, N, r))
    return X + up(T.gelu(h))


# --------------------------------------------------------------------------- attention block
def window_partition(x: Tensor, dims, window) -> tuple[Tensor, tuple]:
    """(B, N, C) -> (B * nW, wd*wh*ww, C); pads the grid with zero tokens if needed."""
    B, _, C = x.shape
    D, H, W = dims
    wd, wh, ww = (min(w, n) for w, n in zip(window, dims))
    pd, ph, pw = (-D) % wd, (-H) % wh, (-W) % ww
    g = T.reshape(x, (B, D, H, W, C))
    g = T.pad(g, ((0, 0), (0, pd), (0, ph), (0, pw), (0, 0)))
    Dp, Hp, Wp = D + pd, H + ph, W + pw
    g = T.reshape(g, (B, Dp // wd, wd, Hp // wh, wh, Wp // ww, ww, C))
    g = T.transpose(g, (0, 1, 3, 5, 2, 4, 6, 7))
    nw = (Dp // wd) * (Hp // wh) * (Wp // ww)
    return T.reshape(g, (B * nw, wd * wh * ww, C)), (B, Dp, Hp, Wp, wd, wh, ww)


def window_merge(w: Tensor, dims, layout) -> Tensor:
    B, Dp, Hp, Wp, wd, wh, ww = layout
    C = w.shape[-1]
    D, H, W = dims
    g = T.reshape(w, (B, Dp // wd, Hp // wh, Wp // ww, wd, wh, ww, C))
    g = T.transpose(g, (0, 1, 4, 2, 5, 3, 6, 7))
    g = T.reshape(g, (B, Dp, Hp, Wp, C))
    if (Dp, Hp, Wp) != (D, H, W):
        g = g[:, :D, :H, :W, :]
    return T.reshape(g, (B, D * H * W, C))


class AttentionBlock3D(Module):
    """Pre-norm windowed self-attention, adapter, then pre-norm MLP.

    Attention and MLP weights play the role of the pretrained ViT and are
    frozen; the adapter is trainable.
    """

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        C = cfg.embed_dim
        if C % cfg.num_heads:
            raise ConfigError(f"embed_dim={C} not divisible by num_heads={cfg.num_heads}")
        self.window = tuple(cfg.window)
        self.norm1 = LayerNorm(C, origin="pretrained-2d")
        self.attn = MultiHeadAttention(C, cfg.num_heads, rng, origin="pretrained-2d")
        self.norm2 = LayerNorm(C, origin="pretrained-2d")
        self.mlp = MLP(C, cfg.mlp_ratio * C, C, rng, origin="pretrained-2d")
        self.adapter = Adapter3D(C, cfg.adapter_rank, cfg.adapter_kernel, rng) if cfg.adapters else None

    def attend(self, x: Tensor, dims) -> Tensor:
        windows, layout = window_partition(self.norm1(x), dims, self.window)
        return window_merge(self.attn(windows), dims, layout)

    def forward(self, grid: TokenGrid) -> TokenGrid:
        x = grid.tokens
        x = x + self.attend(x, grid.dims)
        if self.adapter is not None:
            x = self.adapter(x, grid.dims)
        x = x + self.mlp(self.norm2(x))
        return TokenGrid(x, grid.dims)


def attention_block(grid: TokenGrid, block: AttentionBlock3D) -> TokenGrid:
    return block(grid)


# --------------------------------------------------------------------------- bottleneck
class Bottleneck3D(Module):
    """Pointwise 3D conv followed by a depthwise 3 x 3 x 3 conv, trained from scratch."""

    def __init__(self, dim: int, out_dim: int, rng: np.random.Generator):
        self.conv1 = Conv3d(dim, out_dim, 1, rng, origin="new-3d")
        self.conv2 = Conv3d(out_dim, out_dim, 3, rng, padding=1, groups=out_dim, origin="new-3d")

    def forward(self, grid: TokenGrid) -> Tensor:
        return self.conv2(self.conv1(grid.to_dense()))

    def identity_init(self) -> None:
        c = self.conv1.weight.shape[0]
        self.conv1.weight.data[...] = np.eye(c, self.conv1.weight.shape[1]).reshape(c, -1, 1, 1, 1)
        self.conv1.bias.data[...] = 0.0
        self.conv2.weight.data[...] = 0.0
        self.conv2.weight.data[:, :, 1, 1, 1] = 1.0
        self.conv2.bias.data[...] = 0.0


def bottleneck(grid: TokenGrid, neck: Bottleneck3D) -> Tensor:
    return neck(grid)


# --------------------------------------------------------------------------- encoder
@dataclass
class EncoderOutput:
    embedding: Tensor
    stages: list[TokenGrid] = field(default_factory=list)


class ImageEncoder3D(Module):
    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.patch = PatchEmbed3D(cfg, rng)
        self.pos = PositionEncoding3D(cfg, rng)
        self.blocks = [AttentionBlock3D(cfg, rng) for _ in range(cfg.num_stages * cfg.blocks_per_stage)]
        self.neck = Bottleneck3D(cfg.embed_dim, cfg.embed_dim, rng)

    def forward(self, volume: Tensor) -> EncoderOutput:
        grid = self.pos(self.patch(volume))
        stages = []
        per = self.cfg.blocks_per_stage
        for i, block in enumerate(self.blocks):
            grid = block(grid)
            if (i + 1) % per == 0:
                stages.append(grid)
        return EncoderOutput(self.neck(grid), stages)
