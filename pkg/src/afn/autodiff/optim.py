"""Adam with global-norm gradient clipping and a step-decay learning rate."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Tensor


def step_decay_lr(step: int, base: float = 1e-4, decay: float = 0.9, interval: int = 3000) -> float:
    """Learning rate ``base * decay ** floor(step / interval)``."""
    return base * decay ** (step // interval)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads))


def clip_by_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale every gradient by ``min(1, max_norm / norm)``; returns the clipped list and the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm or norm == 0.0:
        return list(grads), norm
    scale = max_norm / norm
    return [g * scale for g in grads], norm


@dataclass
class OptimizerState:
    base_lr: float = 1e-4
    decay: float = 0.9
    decay_interval: int = 3000
    clip: float | None = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr(self) -> float:
        return step_decay_lr(self.step, self.base_lr, self.decay, self.decay_interval)

    def hyperparams(self) -> dict:
        return {
            "base_lr": self.base_lr,
            "decay": self.decay,
            "decay_interval": self.decay_interval,
            "clip": self.clip,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
        }


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimizerState) -> dict:
    """Clip, then apply one Adam update in place. Returns ``{"lr", "grad_norm"}``."""
    names = [n for n in params if n in grads]
    for n in names:
        if not np.isfinite(grads[n]).all():
            raise NumericError(f"non-finite gradient for parameter {n!r}; step aborted")
    clipped, norm = clip_by_global_norm([grads[n] for n in names], state.clip)
    lr = state.lr
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    for n, g in zip(names, clipped):
        p = params[n]
        m = state.m.get(n)
        if m is None:
            m = state.m[n] = np.zeros_like(p.data)
            state.v[n] = np.zeros_like(p.data)
        v = state.v[n]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)
    state.step = t
    return {"lr": lr, "grad_norm": norm}
