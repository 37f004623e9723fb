"""AdamW with decoupled weight decay, and global-norm gradient clipping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
               lr=1e-4, beta1=0.8, beta2=0.99, weight_decay=0.01, eps=1e-8):
    """Update ``params`` in place.

    Weights are first shrunk by ``1 - lr * weight_decay``, then moved by the
    bias-corrected Adam direction.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
    state.step += 1
    c1 = 1.0 - beta1 ** state.step
    c2 = 1.0 - beta2 ** state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
    return params, state


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-4, betas=(0.8, 0.99),
                 weight_decay=0.01, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.state = AdamState()

    def step(self, grads: dict[str, np.ndarray]):
        adamw_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2,
                   self.weight_decay, self.eps)


def global_norm(grads) -> float:
    arrays = grads.values() if isinstance(grads, dict) else grads
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in arrays)))


def clip_grad_norm(grads, max_norm: float):
    """Scale all gradients by ``max_norm / norm`` when the global L2 norm exceeds it.

    Accepts a dict or a list of arrays and returns the same kind, plus the
    norm measured before clipping.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    scale = max_norm / norm if norm > max_norm else 1.0
    if isinstance(grads, dict):
        out = {k: g * scale for k, g in grads.items()} if scale != 1.0 else dict(grads)
    else:
        out = [g * scale for g in grads] if scale != 1.0 else list(grads)
    return out, norm
