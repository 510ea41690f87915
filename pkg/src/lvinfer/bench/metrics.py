"""Evaluation metrics for posterior predictions."""

from __future__ import annotations

import numpy as np

SATURATION_RANGE = 0.6  # fixed physical range 0.8 - 0.2 of saturation values


def min_l2_error(predictions: np.ndarray, truth: np.ndarray) -> float:
    """Smallest euclidean distance from any prediction to the truth (raw units)."""
    P = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64).ravel()
    if P.ndim != 2 or P.shape[1] != t.size or P.shape[0] < 1:
        raise ValueError(f"predictions {P.shape} incompatible with truth ({t.size},)")
    return float(np.min(np.linalg.norm(P - t, axis=1)))


def length_scale(values: np.ndarray, mode: str = "six_sigma") -> float:
    """Six times the pooled pixel standard deviation, or the fixed saturation range."""
    if mode == "saturation":
        return SATURATION_RANGE
    if mode != "six_sigma":
        raise ValueError(f"unknown length-scale mode {mode!r}")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty value pool")
    return 6.0 * float(values.std())


def relative_error(pred: np.ndarray, truth: np.ndarray, scale: float) -> float:
    """Mean absolute pixel deviation divided by the length scale."""
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    return float(np.mean(np.abs(pred - truth)) / scale)


def relative_variation(predictions: np.ndarray, scale: float) -> float:
    """Mean per-pixel (max - min) across predictions, divided by the length scale."""
    if scale <= 0.0:
        raise ValueError("scale must be positive")
    P = np.asarray(predictions, dtype=np.float64)
    if P.shape[0] < 2:
        raise ValueError("need at least two predictions")
    ranges = P.max(axis=0) - P.min(axis=0)
    return float(np.mean(ranges) / scale)
