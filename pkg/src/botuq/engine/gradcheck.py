"""Central finite-difference checks for reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    n_checked: int
    n_failed: int

    @property
    def ok(self) -> bool:
        return self.n_failed == 0


def finite_difference(loss_fn: Callable[[], float], p: Tensor, h: float = 1e-6) -> np.ndarray:
    """d loss / d p by central differences; ``loss_fn`` must be noise-frozen."""
    g = np.zeros_like(p.values)
    flat = p.values.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2.0 * h)
    return g


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-6,
    rtol: float = 1e-5,
    atol: float = 1e-8,
) -> GradCheckResult:
    """Compare analytic and central-difference gradients elementwise.

    An entry passes when ``|g - fd| <= atol`` or
    ``|g - fd| <= rtol * max(|g|, |fd|)``.
    """
    for p in params:
        p.grad = None
    loss = build_loss()
    backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params]

    def value() -> float:
        return build_loss().item()

    worst, worst_name, n, failed = 0.0, "", 0, 0
    for p, g in zip(params, analytic):
        fd = finite_difference(value, p, h)
        diff = np.abs(g - fd)
        scale = np.maximum(np.abs(g), np.abs(fd))
        bad = (diff > atol) & (diff > rtol * scale)
        rel = diff / np.maximum(scale, atol)
        n += g.size
        failed += int(bad.sum())
        if rel.size and rel.max() > worst:
            worst, worst_name = float(rel.max()), p.name or str(p.shape)
    return GradCheckResult(worst, worst_name, n, failed)
