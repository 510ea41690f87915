"""k-nearest-neighbor differential entropy estimation (nats).

Kozachenko-Leonenko form under the max norm:
    H_hat = psi(N) - psi(k) + (d/N) * sum_i log(2 * r_i),
with r_i the Chebyshev distance from sample i to its k-th neighbor.
Neighbor search is exact brute force, chunked to bound memory.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import digamma

_CHUNK = 256
_JITTER = 1e-12


@dataclass(frozen=True)
class EntropySpec:
    k: int = 5

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _kth_neighbor_distances(X: np.ndarray, k: int) -> np.ndarray:
    n = X.shape[0]
    r = np.empty(n)
    for start in range(0, n, _CHUNK):
        stop = min(start + _CHUNK, n)
        # Chebyshev distances from the chunk to all points
        diff = np.abs(X[start:stop, None, :] - X[None, :, :])
        D = diff.max(axis=2)
        D[np.arange(stop - start), np.arange(start, stop)] = np.inf  # exclude self
        r[start:stop] = np.partition(D, k - 1, axis=1)[:, k - 1]
    return r


def _has_duplicates(X: np.ndarray) -> bool:
    order = np.lexsort(X.T)
    diffs = np.diff(X[order], axis=0)
    return bool(np.any(np.all(diffs == 0.0, axis=1)))


def ksg_entropy(samples: np.ndarray, spec: EntropySpec = EntropySpec()) -> float:
    """Entropy estimate in nats; N must exceed k.

    Exactly coincident points get a deterministic jitter of 1e-12 times the
    data scale (fixed-seed noise, so translation and scaling invariances
    survive), with a warning.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("samples must be (N, d)")
    n, d = X.shape
    if n <= spec.k:
        raise ValueError(f"need more than k={spec.k} samples, got {n}")
    if _has_duplicates(X):
        scale = float(X.std())
        if scale == 0.0:
            scale = 1.0
        warnings.warn(
            f"coincident samples; applying deterministic jitter of {_JITTER:.0e} * scale"
        )
        X = X + np.random.default_rng(0).standard_normal(X.shape) * (_JITTER * scale)
    r = _kth_neighbor_distances(X, spec.k)
    return float(digamma(n) - digamma(spec.k) + d / n * np.sum(np.log(2.0 * r)))


@dataclass
class EntropyReport:
    case_ids: list
    n_samples: list[int]
    dim: int
    k: int
    entropies: np.ndarray

    def summary(self) -> dict:
        H = self.entropies
        return {
            "n_cases": int(H.size),
            "mean": float(np.mean(H)),
            "median": float(np.median(H)),
            "q25": float(np.quantile(H, 0.25)),
            "q75": float(np.quantile(H, 0.75)),
            "min": float(np.min(H)),
            "max": float(np.max(H)),
        }


def entropy_report(
    cases: list[np.ndarray],
    spec: EntropySpec = EntropySpec(),
    case_ids: list | None = None,
) -> EntropyReport:
    """Per-case entropies for a list of (M, d) sample sets."""
    if not cases:
        raise ValueError("no cases given")
    dims = {np.asarray(c).shape[1] for c in cases}
    if len(dims) != 1:
        raise ValueError(f"cases have mixed dimensions: {sorted(dims)}")
    ids = list(range(len(cases))) if case_ids is None else list(case_ids)
    entropies = np.array([ksg_entropy(c, spec) for c in cases])
    return EntropyReport(
        case_ids=ids,
        n_samples=[int(np.asarray(c).shape[0]) for c in cases],
        dim=dims.pop(),
        k=spec.k,
        entropies=entropies,
    )


def write_entropy_csv(path: str | Path, report: EntropyReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["case_id", "n_samples", "dim", "k", "entropy_nats"])
        for cid, m, h in zip(report.case_ids, report.n_samples, report.entropies):
            writer.writerow([cid, m, report.dim, report.k, repr(float(h))])
