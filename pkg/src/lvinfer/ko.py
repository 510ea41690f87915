"""Three-mode nonlinear ODE benchmark: simulation, priors, resampling, datasets.

The system is dy1/dt = y1*y3, dy2/dt = -y2*y3, dy3/dt = -y1^2 + y2^2 with
y(0) = (1, xi1, xi2), integrated by classical fixed-step RK4. Observations
are the y1 trace, linearly resampled to a coarse uniform grid (the signal
bandwidth stays below half the coarse rate) and min-max normalized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scaling import MinMaxNorm

XI1_RANGE = (-0.1, 0.1)
XI2_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class KOParams:
    dt: float = 0.003
    t_end: float = 30.0
    xi: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.dt <= 0.0 or self.t_end <= 0.0:
            raise ValueError("dt and t_end must be positive")

    @property
    def n_steps(self) -> int:
        # floor with a tiny guard so exact multiples are not lost to rounding
        return int(np.floor(self.t_end / self.dt + 1e-9))


@dataclass
class KOTrajectory:
    times: np.ndarray
    y: np.ndarray  # (T, 3), columns (y1, y2, y3)


def ko_rhs(y: np.ndarray) -> np.ndarray:
    """Right-hand side; broadcasts over leading dimensions of (..., 3)."""
    y = np.asarray(y, dtype=np.float64)
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    return np.stack([y1 * y3, -y2 * y3, -y1 * y1 + y2 * y2], axis=-1)


def _rk4_path(state: np.ndarray, dt: float, n_steps: int) -> np.ndarray:
    """Classical RK4; returns the full path (n_steps+1, ..., 3)."""
    path = np.empty((n_steps + 1,) + state.shape)
    path[0] = state
    y = state
    for i in range(n_steps):
        k1 = ko_rhs(y)
        k2 = ko_rhs(y + 0.5 * dt * k1)
        k3 = ko_rhs(y + 0.5 * dt * k2)
        k4 = ko_rhs(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise RuntimeError(f"non-finite state at step {i + 1}")
        path[i + 1] = y
    return path


def rk4_solve(params: KOParams) -> KOTrajectory:
    n = params.n_steps
    y0 = np.array([1.0, params.xi[0], params.xi[1]])
    path = _rk4_path(y0, params.dt, n)
    times = np.arange(n + 1) * params.dt
    return KOTrajectory(times, path)


def sample_prior(n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent draws of (xi1, xi2) from their uniform priors."""
    if n < 1:
        raise ValueError("n must be >= 1")
    xi1 = rng.uniform(*XI1_RANGE, size=n)
    xi2 = rng.uniform(*XI2_RANGE, size=n)
    return np.column_stack([xi1, xi2])


def resample_y1(traj: KOTrajectory, m: int) -> np.ndarray:
    """Linear interpolation of y1 onto m equally spaced times over [0, t_end]."""
    if m < 2:
        raise ValueError("m must be >= 2")
    targets = np.linspace(0.0, float(traj.times[-1]), m)
    return np.interp(targets, traj.times, traj.y[:, 0])


@dataclass
class KODataset:
    xi: np.ndarray  # (n, 2) raw prior draws
    y1: np.ndarray  # (n, m) raw resampled observations
    norm_xi: MinMaxNorm
    norm_y1: MinMaxNorm
    train_ids: np.ndarray
    test_ids: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def xi_normalized(self) -> np.ndarray:
        return self.norm_xi.apply(self.xi)

    @property
    def y1_normalized(self) -> np.ndarray:
        return self.norm_y1.apply(self.y1)


def build_ko_dataset(
    n: int,
    rng: np.random.Generator,
    dt: float = 0.003,
    t_end: float = 30.0,
    n_points: int = 256,
    n_train: int | None = None,
    chunk: int = 256,
) -> KODataset:
    """Simulate n trajectories and assemble the normalized benchmark dataset.

    Normalization min/max are computed on the training split only. The
    implied coarse sampling rate is recorded in the metadata.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    xi = sample_prior(n, rng)
    params = KOParams(dt=dt, t_end=t_end)
    n_steps = params.n_steps
    times = np.arange(n_steps + 1) * dt
    targets = np.linspace(0.0, float(times[-1]), n_points)

    y1 = np.empty((n, n_points))
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        state = np.column_stack(
            [np.ones(stop - start), xi[start:stop, 0], xi[start:stop, 1]]
        )
        path = _rk4_path(state, dt, n_steps)  # (T, batch, 3)
        for j in range(stop - start):
            y1[start + j] = np.interp(targets, times, path[:, j, 0])

    if n_train is None:
        n_train = max(1, int(round(n * 0.75)))
    if not 1 <= n_train <= n:
        raise ValueError(f"n_train={n_train} out of range for n={n}")
    train_ids = np.arange(n_train)
    test_ids = np.arange(n_train, n)

    norm_xi = MinMaxNorm.fit(xi[train_ids])
    norm_y1 = MinMaxNorm.fit(y1[train_ids])
    meta = {
        "dt": dt,
        "t_end": t_end,
        "n_points": n_points,
        "sampling_rate_hz": n_points / t_end,
        "n_train": int(n_train),
    }
    return KODataset(xi, y1, norm_xi, norm_y1, train_ids, test_ids, meta)
