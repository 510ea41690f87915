"""Grid geometry, fluid constants and the seven-well layout.

Cells are indexed row-major: cell(ix, iy) = iy * nx + ix, with x spanning
the short side (length LX) and y the long side (length LY). Fields are
stored as (ny, nx) arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LX_DEFAULT = 333.58
LY_DEFAULT = 670.56
POROSITY_DEFAULT = 1e-3
INJECTION_RATE = 9.3529


@dataclass(frozen=True)
class ReservoirGrid:
    nx: int
    ny: int
    Lx: float = LX_DEFAULT
    Ly: float = LY_DEFAULT
    porosity: float = POROSITY_DEFAULT

    def __post_init__(self) -> None:
        if self.nx < 4 or self.ny < 4:
            if not (self.nx >= 1 and self.ny >= 1 and (self.nx == 1 or self.ny == 1)):
                raise ValueError("grid needs nx, ny >= 4 (or a 1-D column for tests)")
        if self.Lx <= 0 or self.Ly <= 0 or self.porosity <= 0:
            raise ValueError("lengths and porosity must be positive")

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dy  # unit thickness

    def cell_index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def nearest_cell(self, x: float, y: float) -> tuple[int, int]:
        """Cell whose center is nearest to (x, y); boundary points clamp inward."""
        ix = int(np.clip(np.floor(x / self.dx), 0, self.nx - 1))
        iy = int(np.clip(np.floor(y / self.dy), 0, self.ny - 1))
        return ix, iy


@dataclass(frozen=True)
class FluidParams:
    mu_w: float = 3e-4
    mu_o: float = 3e-3
    s_wc: float = 0.2
    s_or: float = 0.2

    def __post_init__(self) -> None:
        if self.mu_w <= 0 or self.mu_o <= 0:
            raise ValueError("viscosities must be positive")
        if not (0.0 <= self.s_wc and 0.0 <= self.s_or and self.s_wc + self.s_or < 1.0):
            raise ValueError("residual saturations must satisfy 0 <= s_wc + s_or < 1")

    @property
    def s_max(self) -> float:
        return 1.0 - self.s_or


@dataclass(frozen=True)
class Well:
    ix: int
    iy: int
    rate: float  # positive injects, negative produces

    @property
    def is_injector(self) -> bool:
        return self.rate > 0.0


def standard_wells(grid: ReservoirGrid, injection_rate: float = INJECTION_RATE) -> tuple[Well, ...]:
    """Two injectors at the south corners, five producers along the north side.

    Injectors carry IR/2 each, producers -IR/5 each; the last producer is
    balanced against the floating-point running sum of the others so the
    rates total exactly zero in tuple order (incompressibility needs a
    consistent right-hand side).
    """
    inj_rate = injection_rate / 2.0
    prod_rate = -injection_rate / 5.0
    rates = [inj_rate, inj_rate, prod_rate, prod_rate, prod_rate, prod_rate]
    partial = 0.0
    for r in rates:
        partial += r
    rates.append(-partial)
    spots = [
        (0.0, 0.0),
        (grid.Lx, 0.0),
        (0.0, 0.7 * grid.Ly),
        (0.0, grid.Ly),
        (0.5 * grid.Lx, grid.Ly),
        (grid.Lx, grid.Ly),
        (grid.Lx, 0.7 * grid.Ly),
    ]
    wells = []
    for (x, y), rate in zip(spots, rates):
        ix, iy = grid.nearest_cell(x, y)
        wells.append(Well(ix, iy, rate))
    cells = {(w.ix, w.iy) for w in wells}
    if len(cells) != len(wells):
        raise ValueError("grid too coarse: wells collide in one cell")
    return tuple(wells)


def well_source_vector(wells: tuple[Well, ...], grid: ReservoirGrid) -> np.ndarray:
    q = np.zeros(grid.n_cells)
    for w in wells:
        q[grid.cell_index(w.ix, w.iy)] += w.rate
    return q
