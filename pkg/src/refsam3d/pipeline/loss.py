"""Segmentation loss: soft Dice plus voxelwise binary cross-entropy."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError, InputError
from ..numerics import tensor as T
from ..numerics.tensor import Tensor


def soft_dice_loss(logits: Tensor, mask: np.ndarray, smooth: float = 1.0) -> Tensor:
    """Mean over the batch of 1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s)."""
    B = logits.shape[0]
    p = T.reshape(T.sigmoid(logits), (B, -1))
    g = np.asarray(mask, dtype=logits.dtype).reshape(B, -1)
    inter = (p * g).sum(axis=1)
    denom = p.sum(axis=1) + g.sum(axis=1) + smooth
    return (1.0 - (inter * 2.0 + smooth) / denom).mean()


def loss(logits: Tensor, mask) -> Tensor:
    """Soft Dice (smoothing 1) + mean BCE; each term is non-negative."""
    mask = np.asarray(mask)
    if mask.size != logits.size:
        raise DimensionError(f"mask {mask.shape} does not match logits {logits.shape}")
    mask = mask.reshape(logits.shape)
    if not np.isin(mask, (0, 1)).all():
        raise InputError("mask must be binary (values 0 or 1)")
    return soft_dice_loss(logits, mask) + T.bce_with_logits(logits, mask)
