"""AdamW with decoupled weight decay and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float):
    """Scale all gradients jointly so their global L2 norm is at most ``max_norm``.

    Returns ``(clipped, norm_before)``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
    norm = global_norm(grads)
    if max_norm is None or norm <= max_norm:
        return {k: g.copy() for k, g in grads.items()}, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState,
                   lr: float, weight_decay: float = 0.0, clip_norm: float | None = None,
                   betas=(0.9, 0.999), eps: float = 1e-8) -> float:
    """One in-place AdamW update; returns the gradient norm before clipping."""
    grads, norm = clip_by_global_norm(grads, clip_norm)
    state.step += 1
    b1, b2 = betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return norm
