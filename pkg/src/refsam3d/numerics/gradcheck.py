"""Reverse-mode vs. central-difference gradient comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..errors import EvaluationError
from .tensor import Tensor


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"grad_check {status}: max rel err {self.max_error:.3e} (tol {self.tolerance:.1e})"]
        for name, err in sorted(self.errors.items(), key=lambda kv: -kv[1]):
            lines.append(f"  {name:<48s} {err:.3e}  ({self.checked[name]} entries)")
        return "\n".join(lines)


def _eval(f: Callable[[], Tensor]) -> float:
    value = float(np.asarray(f().data))
    if not np.isfinite(value):
        raise EvaluationError(f"function value is not finite: {value}")
    return value


def grad_check(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor] | Sequence[Tensor],
    eps: float = 1e-5,
    tolerance: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
    scale_floor: float = 1e-5,
) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f()`` against central differences.

    The error for one parameter is ``max|g_ad - g_fd| / max(max|g_ad|, max|g_fd|, scale_floor)``.
    With ``max_entries`` set, that many randomly chosen entries per parameter
    are perturbed instead of all of them.
    """
    if not isinstance(params, Mapping):
        params = {f"param{i}": p for i, p in enumerate(params)}
    saved = {name: p.requires_grad for name, p in params.items()}
    for p in params.values():
        p.requires_grad = True
        p.grad = None
    try:
        out = f()
        if not np.isfinite(out.data).all():
            raise EvaluationError("function value is not finite")
        out.backward()
        report = GradCheckReport(tolerance)
        rng = np.random.default_rng(seed)
        for name, p in params.items():
            analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
            flat = p.data.reshape(-1)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            else:
                idx = np.arange(flat.size)
            numeric = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + eps
                fp = _eval(f)
                flat[i] = old - eps
                fm = _eval(f)
                flat[i] = old
                numeric[j] = (fp - fm) / (2 * eps)
            a = analytic.reshape(-1)[idx]
            scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), scale_floor)
            report.errors[name] = float(np.abs(a - numeric).max(initial=0.0) / scale)
            report.checked[name] = len(idx)
        return report
    finally:
        for name, p in params.items():
            p.requires_grad = saved[name]
            p.grad = None
