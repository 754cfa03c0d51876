"""AdamW with decoupled weight decay.

For each parameter ``p`` with gradient ``g`` at step ``t`` (1-based)::

    m <- b1 * m + (1 - b1) * g
    v <- b2 * v + (1 - b2) * g**2
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    p <- p - lr_t * (m_hat / (sqrt(v_hat) + eps) + wd * p)

Weight decay only touches matrices (``ndim >= 2``); gains, biases and
vector readouts are left alone.  ``lr_t`` ramps linearly over ``warmup``
steps and then stays at ``lr`` (or follows a cosine to ``lr * min_lr_ratio``
when ``total_steps`` is given).  Gradients may be clipped to a global L2
norm before the moment updates.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import UsageError


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup: int = 0
    clip_norm: float | None = 1.0
    cosine: bool = False
    min_lr_ratio: float = 0.1

    def __post_init__(self):
        if not self.lr > 0:
            raise UsageError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise UsageError("betas must lie in [0, 1)")
        if self.weight_decay < 0 or self.warmup < 0:
            raise UsageError("weight_decay and warmup must be non-negative")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise UsageError("clip_norm must be positive or None")

    def to_dict(self) -> dict:
        return asdict(self)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], config: OptimizerConfig | None = None, total_steps: int | None = None):
        self.config = config or OptimizerConfig()
        self.total_steps = total_steps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def lr_at(self, t: int) -> float:
        c = self.config
        if c.warmup and t <= c.warmup:
            return c.lr * t / c.warmup
        if c.cosine and self.total_steps:
            span = max(self.total_steps - c.warmup, 1)
            frac = min(max(t - c.warmup, 0) / span, 1.0)
            return c.lr * (c.min_lr_ratio + (1 - c.min_lr_ratio) * 0.5 * (1 + math.cos(math.pi * frac)))
        return c.lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> float:
        """Update ``params`` in place; returns the pre-clip gradient norm."""
        c = self.config
        self.t += 1
        norm = global_norm(grads)
        scale = 1.0
        if c.clip_norm is not None and norm > c.clip_norm:
            scale = c.clip_norm / norm
        lr = self.lr_at(self.t)
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, p in params.items():
            g = grads[name] * scale if scale != 1.0 else grads[name]
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + c.eps)
            if c.weight_decay and p.ndim >= 2:
                update += c.weight_decay * p
            p -= (lr * update).astype(p.dtype, copy=False)
        return norm
