"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState) -> AdamState:
    """Apply one Adam update in place; parameters without a gradient see a zero gradient."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ShapeMismatch(f"adam: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m.astype(p.dtype), v.astype(p.dtype)
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.dtype)
    return state


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray | None]:
    return {k: p.grad for k, p in params.items()}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def clip_grad_norm(grads: dict[str, np.ndarray | None], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values() if g is not None)))
    if total > max_norm > 0:
        scale = max_norm / total
        for k, g in grads.items():
            if g is not None:
                grads[k] = g * g.dtype.type(scale)
    return total
