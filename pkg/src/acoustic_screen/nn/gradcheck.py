"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(f: Callable[[], Tensor], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences; ``f`` re-evaluates the graph from scratch."""
    g = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f().data.sum())
        flat[i] = orig - eps
        down = float(f().data.sum())
        flat[i] = orig
        g.reshape(-1)[i] = (up - down) / (2 * eps)
    return g


ZERO_NORM = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray, zero_norm: float = ZERO_NORM) -> float:
    """``||a - n|| / max(||a||, ||n||)``.

    Returns 0 when both norms are below ``zero_norm``: a gradient that is
    identically zero (e.g. a bias that softmax is invariant to) has a
    finite-difference estimate made of rounding noise only.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < zero_norm:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Largest relative error over ``inputs`` between backprop and finite differences.

    ``f`` must return a tensor; its elements are summed to form the scalar.
    """
    for x in inputs:
        x.grad = None
        x.requires_grad = True
    out = f()
    out.backward(np.ones_like(out.data))
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        worst = max(worst, relative_error(analytic, numeric_grad(f, x, eps)))
    return worst
