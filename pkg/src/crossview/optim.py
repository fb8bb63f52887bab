"""AdamW with decoupled weight decay and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nn import Parameter


@dataclass
class OptimState:
    base_lr: float = 1.5e-4
    weight_decay: float = 0.05
    betas: tuple[float, float] = (0.9, 0.95)
    eps: float = 1e-8
    warmup_steps: int = 0
    total_steps: int = 1
    warmup_lr: float = 1e-6
    clip_norm: float | None = None
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)

    def lr_at(self, step: int) -> float:
        return cosine_lr(step, self.total_steps, self.warmup_steps, self.base_lr, self.warmup_lr)


def decays(name: str, p: Parameter) -> bool:
    """Weight decay applies to matrices only: never to biases, norms or embedding vectors."""
    return p.ndim >= 2


def adamw_step(params: list[Parameter], state: OptimState, lr: float) -> None:
    """One AdamW update in place. Parameters without a gradient are skipped.

    With ``state.clip_norm`` set, gradients are first rescaled so that their
    global L2 norm is at most that value.
    """
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    scale = 1.0
    if state.clip_norm is not None:
        norm = global_grad_norm(params)
        if norm > state.clip_norm:
            scale = state.clip_norm / norm
    state.step += 1
    b1, b2 = state.betas
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p in params:
        if p.grad is None:
            continue
        g = p.grad if scale == 1.0 else p.grad * scale
        m = state.exp_avg.get(p.name)
        if m is None:
            m = state.exp_avg[p.name] = np.zeros_like(p.data)
            state.exp_avg_sq[p.name] = np.zeros_like(p.data)
        v = state.exp_avg_sq[p.name]
        if state.weight_decay and decays(p.name, p):
            p.data *= 1.0 - lr * state.weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        denom = np.sqrt(v / bc2) + state.eps
        p.data -= (lr / bc1) * m / denom


def global_grad_norm(params: list[Parameter]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64)))
                         for p in params if p.grad is not None))


def cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float,
              warmup_lr: float = 1e-6) -> float:
    """Linear ramp from ``warmup_lr`` to ``base_lr``, then half-cosine down to zero."""
    if step < warmup_steps:
        return warmup_lr + (base_lr - warmup_lr) * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = min(max(step - warmup_steps, 0), span) / span
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
