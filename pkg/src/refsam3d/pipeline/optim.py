"""AdamW with decoupled weight decay and a linear learning-rate schedule."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from ..numerics.nn import Parameter


def linear_lr(base_lr: float, epoch: int, epochs: int) -> float:
    """Linear decay from ``base_lr`` at epoch 0 towards 0 at epoch ``epochs``."""
    return base_lr * max(0.0, 1.0 - epoch / epochs)


class AdamW:
    """Updates only parameters that are not frozen."""

    def __init__(self, params: Iterable[Parameter], lr: float = 1e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-5):
        self.params = [p for p in params if not p.frozen]
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
