"""Central finite-difference oracle for checking backward rules."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward


def numerical_gradient(f: Callable[[], Tensor], t: Tensor, step: float = 1e-5) -> np.ndarray:
    """d f / d t by central differences; ``f`` must return a scalar and read ``t.data``."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f().data.item()
        flat[i] = orig - step
        lo = f().data.item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def analytic_gradients(f: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """||a - b|| / max(||a||, ||b||) in the 2-norm; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Worst relative error between backward and central differences over ``params``."""
    analytic = analytic_gradients(f, params)
    worst = 0.0
    for p, g in zip(params, analytic):
        worst = max(worst, relative_error(g, numerical_gradient(f, p, step)))
    return worst
