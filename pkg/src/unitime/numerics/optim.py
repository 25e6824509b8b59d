"""AdamW with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; step rejected")
        self.name = name


@dataclass
class AdamWState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: Mapping[str, Tensor], state: AdamWState,
               grads: Mapping[str, np.ndarray] | None = None) -> None:
    """One AdamW update, in place.

    ``grads`` defaults to each parameter's ``.grad``; parameters without a
    gradient (frozen, or unused this step) are left untouched. The whole step
    is rejected before any parameter moves if a gradient is NaN/Inf.
    """
    if grads is None:
        grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - state.lr * state.weight_decay
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_grad_norm(params: Mapping[str, Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; return the pre-clip norm."""
    total = float(np.sqrt(sum(float((p.grad * p.grad).sum()) for p in params.values() if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total
