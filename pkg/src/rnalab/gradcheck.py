"""Central finite-difference gradient oracle.

The oracle only ever reads forward values, so it checks the backward pass
without sharing any code path with it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor


def numerical_grad(fn: Callable[[], Tensor], leaf: Tensor, h: float = 1e-6) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``leaf.values``."""
    grad = np.zeros_like(leaf.values)
    flat = leaf.values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn().item()
        flat[i] = orig - h
        down = fn().item()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)`` over the whole gradient array."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(
    fn: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-6, floor: float = 1e-8
) -> float:
    """Run one backward pass and return the worst relative error over ``leaves``."""
    for leaf in leaves:
        leaf.zero_grad()
    fn().backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.values)
        worst = max(worst, relative_error(analytic, numerical_grad(fn, leaf, h), floor))
    return worst
