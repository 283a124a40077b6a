"""Adam with bias correction, driven by a cosine-annealed learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


def cosine_lr(step: int, base_lr: float, t_max: int, eta_min: float = 0.0) -> float:
    if t_max <= 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    if step < 0:
        raise ValueError(f"step must be non-negative, got {step}")
    frac = min(step, t_max) / t_max
    return eta_min + (base_lr - eta_min) * (1.0 + math.cos(math.pi * frac)) / 2.0


@dataclass
class OptimizerState:
    base_lr: float = 5e-4
    t_max: int = 1
    eta_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.eta_min <= self.base_lr:
            raise ValueError("need 0 <= eta_min <= base_lr")
        if self.t_max <= 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")

    def lr(self) -> float:
        return cosine_lr(self.step, self.base_lr, self.t_max, self.eta_min)


class Adam:
    """Adam over a fixed list of parameter tensors.

    The learning rate for update ``t`` (1-based) is ``cosine_lr(t - 1)``, so
    the first update uses the base rate.
    """

    def __init__(self, params: list[Tensor], state: OptimizerState):
        self.params = list(params)
        self.state = state
        if not state.m:
            state.m = [np.zeros_like(p.values) for p in self.params]
            state.v = [np.zeros_like(p.values) for p in self.params]
        for p, m in zip(self.params, state.m):
            if m.shape != p.shape:
                raise ValueError(f"moment shape {m.shape} does not match parameter {p.shape}")

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        st = self.state
        grads = [p.grad if p.grad is not None else np.zeros_like(p.values) for p in self.params]
        for p, g in zip(self.params, grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {p.name or p.shape}")
        lr = st.lr()
        st.step += 1
        t = st.step
        bc1 = 1.0 - st.beta1 ** t
        bc2 = 1.0 - st.beta2 ** t
        for p, g, m, v in zip(self.params, grads, st.m, st.v):
            m *= st.beta1
            m += (1.0 - st.beta1) * g
            v *= st.beta2
            v += (1.0 - st.beta2) * g * g
            p.values = p.values - lr * (m / bc1) / (np.sqrt(v / bc2) + st.eps)
        return lr
