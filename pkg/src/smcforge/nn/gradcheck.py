"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autograd import Tensor, backward


@dataclass
class GradCheckResult:
    name: str
    rel_error: float
    max_abs_diff: float
    analytic_norm: float

    @property
    def ok(self) -> bool:
        return self.rel_error < 1e-4


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||); zero when both vanish."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    denom = max(na, nb)
    if denom < 1e-300:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-4,
                    names=None) -> list[GradCheckResult]:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    ``params`` should already hold float64 data; each entry is perturbed in
    place and restored.
    """
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    results = []
    for name, p in params.items():
        if names is not None and name not in names:
            continue
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(loss_fn().data)
            flat[i] = orig - h
            down = float(loss_fn().data)
            flat[i] = orig
            numeric.reshape(-1)[i] = (up - down) / (2 * h)
        results.append(GradCheckResult(name, relative_error(analytic, numeric),
                                       float(np.abs(analytic - numeric).max()), float(np.linalg.norm(analytic))))
    return results
