"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable

import numpy as np

# f maps a flat point to (scalar value, gradient of same shape as the point)
ValueAndGrad = Callable[[np.ndarray], tuple[float, np.ndarray]]


def central_difference(f: ValueAndGrad, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar part of f."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp.flat[i] += h
        xm = x.copy()
        xm.flat[i] -= h
        fp, _ = f(xp)
        fm, _ = f(xm)
        grad.flat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(
    f: ValueAndGrad, x: np.ndarray, h: float = 1e-5, eps: float = 1e-12
) -> float:
    """Max over coordinates of |analytic - central| / (|analytic| + |central| + eps)."""
    if h <= 0.0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    _, analytic = f(x)
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(
            f"analytic gradient shape {analytic.shape} != point shape {x.shape}"
        )
    numeric = central_difference(f, x, h)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + eps)
    return float(np.max(rel))
