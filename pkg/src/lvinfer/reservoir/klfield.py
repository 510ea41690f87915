"""Truncated Karhunen-Loeve sampler for log-permeability fields.

The covariance is a synthetic exponential kernel on cell centers,
C(x, x') = sigma^2 exp(-|x - x'|_1 / ell). On the uniform grid the
cell-area inner product reduces to the plain euclidean one (area weights
normalized to mean one), so modes come straight from a dense symmetric
eigendecomposition.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import ReservoirGrid

GAMMA_DEFAULT = 0.3
KAPPA0_DEFAULT = 1e-12
N_MODES_DEFAULT = 20


@dataclass
class KLBasis:
    mean_field: np.ndarray  # (ny, nx)
    eigenvalues: np.ndarray  # (L,), nonincreasing
    modes: np.ndarray  # (L, ny, nx), orthonormal
    sigma: float
    corr_len: float
    gamma: float = GAMMA_DEFAULT
    kappa0: float = KAPPA0_DEFAULT
    meta: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size


def build_kl_basis(
    grid: ReservoirGrid,
    sigma: float = 1.0,
    corr_len: float | None = None,
    n_modes: int = N_MODES_DEFAULT,
    mean_field: np.ndarray | None = None,
) -> KLBasis:
    """Eigendecompose the exponential-kernel covariance on the grid.

    Returns the top n_modes modes plus the full eigenvalue sum for trace
    diagnostics. Slightly negative numerical eigenvalues are clamped to 0
    with a warning.
    """
    if corr_len is None:
        corr_len = 0.3 * grid.Ly
    xs = (np.arange(grid.nx) + 0.5) * grid.dx
    ys = (np.arange(grid.ny) + 0.5) * grid.dy
    X, Y = np.meshgrid(xs, ys)  # (ny, nx)
    cx = X.ravel()
    cy = Y.ravel()
    dist1 = np.abs(cx[:, None] - cx[None, :]) + np.abs(cy[:, None] - cy[None, :])
    cov = sigma**2 * np.exp(-dist1 / corr_len)
    vals, vecs = np.linalg.eigh(cov)
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    if np.any(vals < 0.0):
        if np.min(vals) < -1e-8 * max(vals[0], 1.0):
            warnings.warn(f"clamping negative covariance eigenvalues (min {vals.min():.3e})")
        vals = np.maximum(vals, 0.0)
    if n_modes > vals.size:
        raise ValueError(f"n_modes={n_modes} exceeds {vals.size} grid cells")
    modes = vecs[:, :n_modes].T.reshape(n_modes, grid.ny, grid.nx)
    mean = np.zeros((grid.ny, grid.nx)) if mean_field is None else np.asarray(mean_field, float)
    if mean.shape != (grid.ny, grid.nx):
        raise ValueError(f"mean field shape {mean.shape} != {(grid.ny, grid.nx)}")
    return KLBasis(
        mean_field=mean,
        eigenvalues=vals[:n_modes].copy(),
        modes=modes.copy(),
        sigma=sigma,
        corr_len=corr_len,
        meta={"eigenvalue_sum": float(vals.sum()), "n_cells": grid.n_cells},
    )


def kl_sample(basis: KLBasis, xi: np.ndarray) -> np.ndarray:
    """Log-permeability field for one coefficient vector."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape != (basis.n_modes,):
        raise ValueError(f"xi must have shape ({basis.n_modes},), got {xi.shape}")
    coeff = basis.gamma * basis.sigma * np.sqrt(basis.eigenvalues) * xi
    return basis.mean_field + np.tensordot(coeff, basis.modes, axes=1)


def batch_kl_sample(basis: KLBasis, Xi: np.ndarray) -> np.ndarray:
    """Fields for many coefficient vectors at once; Xi is (N, L)."""
    Xi = np.asarray(Xi, dtype=np.float64)
    if Xi.ndim != 2 or Xi.shape[1] != basis.n_modes:
        raise ValueError(f"Xi must be (N, {basis.n_modes}), got {Xi.shape}")
    coeff = basis.gamma * basis.sigma * np.sqrt(basis.eigenvalues) * Xi
    flat = coeff @ basis.modes.reshape(basis.n_modes, -1)
    return basis.mean_field[None] + flat.reshape(Xi.shape[0], *basis.mean_field.shape)


def permeability(G: np.ndarray, kappa0: float = KAPPA0_DEFAULT) -> np.ndarray:
    """Isotropic permeability exp(G) + kappa0 (the floor keeps the solve well posed)."""
    return np.exp(np.asarray(G, dtype=np.float64)) + kappa0
