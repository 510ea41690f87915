"""Per-column min-max normalization with exact round-trip metadata."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MinMaxNorm:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "MinMaxNorm":
        X = np.asarray(X, dtype=np.float64)
        return cls(X.min(axis=0), X.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.hi - self.lo

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Map columns to [0, 1]; constant columns map to 0."""
        X = np.asarray(X, dtype=np.float64)
        span = self.span
        safe = np.where(span > 0.0, span, 1.0)
        out = (X - self.lo) / safe
        return np.where(span > 0.0, out, 0.0)

    def invert(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.float64)
        return Z * self.span + self.lo

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "MinMaxNorm":
        return cls(
            np.asarray(obj["lo"], dtype=np.float64),
            np.asarray(obj["hi"], dtype=np.float64),
        )
