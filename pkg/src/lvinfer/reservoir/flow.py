"""Sequential pressure/transport solver for incompressible two-phase flow.

Per time step: a TPFA pressure solve with harmonic face averaging of
K * total mobility (no-flux boundaries, one cell pinned against the
nullspace), explicit face fluxes from the pressure, then a backward-Euler
saturation update with first-order upwinding solved by Newton with an
analytic Jacobian. The time step halves on Newton failure and doubles
after five consecutive successes, capped at the report interval.

Sign conventions: face flux F is the volumetric rate from the low-index
cell to its +x / +y neighbor; well rates are positive for injection.
Injectors add water only; producers remove water at the cell's
fractional-flow rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu, spsolve

from .grid import FluidParams, ReservoirGrid, Well, well_source_vector
from .klfield import KAPPA0_DEFAULT, KLBasis, kl_sample, permeability


class NewtonFailure(RuntimeError):
    pass


@dataclass
class NewtonInfo:
    iterations: int
    residual: float  # converged max |R|, in pore-volume units


def cell_net_outflux(Fx: np.ndarray, Fy: np.ndarray, grid: ReservoirGrid) -> np.ndarray:
    """Net signed volumetric outflux per cell."""
    net = np.zeros((grid.ny, grid.nx))
    net[:, :-1] += Fx
    net[:, 1:] -= Fx
    net[:-1, :] += Fy
    net[1:, :] -= Fy
    return net.ravel()


def mobilities(s_w, fluid: FluidParams):
    """(lambda_w, lambda_o, f_w) with the effective saturation clamped to [0, 1]."""
    s = np.asarray(s_w, dtype=np.float64)
    s_eff = np.clip((s - fluid.s_wc) / (1.0 - fluid.s_or - fluid.s_wc), 0.0, 1.0)
    lam_w = s_eff**2 / fluid.mu_w
    lam_o = (1.0 - s_eff) ** 2 / fluid.mu_o
    return lam_w, lam_o, lam_w / (lam_w + lam_o)


def fractional_flow_derivative(s_w, fluid: FluidParams):
    """d f_w / d s_w, zero outside the mobile range (clamped regions are flat)."""
    s = np.asarray(s_w, dtype=np.float64)
    den = 1.0 - fluid.s_or - fluid.s_wc
    s_eff = (s - fluid.s_wc) / den
    inside = (s_eff > 0.0) & (s_eff < 1.0)
    se = np.clip(s_eff, 0.0, 1.0)
    lam_w = se**2 / fluid.mu_w
    lam_o = (1.0 - se) ** 2 / fluid.mu_o
    dlam_w = 2.0 * se / fluid.mu_w
    dlam_o = -2.0 * (1.0 - se) / fluid.mu_o
    total = lam_w + lam_o
    dfw_dse = (dlam_w * lam_o - lam_w * dlam_o) / total**2
    return np.where(inside, dfw_dse / den, 0.0)


def transmissibilities(h: np.ndarray, grid: ReservoirGrid):
    """Face transmissibilities from per-cell h = K * total mobility.

    Harmonic averaging; a zero h on either side closes the face.
    """
    h = np.asarray(h, dtype=np.float64).reshape(grid.ny, grid.nx)
    hx_l, hx_r = h[:, :-1], h[:, 1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        Tx = np.where(
            (hx_l > 0) & (hx_r > 0),
            2.0 * grid.dy / grid.dx * (hx_l * hx_r) / (hx_l + hx_r),
            0.0,
        )
        hy_b, hy_t = h[:-1, :], h[1:, :]
        Ty = np.where(
            (hy_b > 0) & (hy_t > 0),
            2.0 * grid.dx / grid.dy * (hy_b * hy_t) / (hy_b + hy_t),
            0.0,
        )
    return Tx, Ty


def _face_lists(grid: ReservoirGrid):
    """Flat (cell_a, cell_b) index pairs for all interior x- and y-faces."""
    idx = np.arange(grid.n_cells).reshape(grid.ny, grid.nx)
    ax = idx[:, :-1].ravel()
    bx = idx[:, 1:].ravel()
    ay = idx[:-1, :].ravel()
    by = idx[1:, :].ravel()
    return np.concatenate([ax, ay]), np.concatenate([bx, by])


def assemble_pressure(h: np.ndarray, grid: ReservoirGrid, wells: tuple[Well, ...]):
    """Unpinned TPFA system (A, b): symmetric, zero row sums, b from well rates."""
    Tx, Ty = transmissibilities(h, grid)
    ca, cb = _face_lists(grid)
    T = np.concatenate([Tx.ravel(), Ty.ravel()])
    rows = np.concatenate([ca, cb, ca, cb])
    cols = np.concatenate([cb, ca, ca, cb])
    vals = np.concatenate([-T, -T, T, T])
    A = sp.coo_matrix((vals, (rows, cols)), shape=(grid.n_cells, grid.n_cells)).tocsr()
    b = well_source_vector(wells, grid)
    return A, b


def solve_pressure(A: sp.csr_matrix, b: np.ndarray, pin_cell: int = 0) -> np.ndarray:
    """Solve with the reference cell pinned to p = 0 (nullspace fix)."""
    A = A.tolil(copy=True)
    A[pin_cell, :] = 0.0
    A[:, pin_cell] = 0.0
    A[pin_cell, pin_cell] = 1.0
    b = b.copy()
    b[pin_cell] = 0.0
    try:
        lu = splu(A.tocsc())
    except RuntimeError as exc:  # singular after pinning
        raise RuntimeError(f"pressure system singular after pinning: {exc}") from exc
    p = lu.solve(b)
    if not np.all(np.isfinite(p)):
        raise RuntimeError("pressure solve produced non-finite values")
    return p


def face_fluxes(p: np.ndarray, Tx: np.ndarray, Ty: np.ndarray, grid: ReservoirGrid):
    """Signed volumetric face fluxes, positive toward +x / +y."""
    P = p.reshape(grid.ny, grid.nx)
    Fx = -Tx * (P[:, 1:] - P[:, :-1])
    Fy = -Ty * (P[1:, :] - P[:-1, :])
    return Fx, Fy


def advance_saturation(
    s: np.ndarray,
    Fx: np.ndarray,
    Fy: np.ndarray,
    wells: tuple[Well, ...],
    dt: float,
    grid: ReservoirGrid,
    fluid: FluidParams,
    newton_rtol: float = 1e-12,
    max_newton: int = 25,
) -> tuple[np.ndarray, NewtonInfo]:
    """One backward-Euler transport step; returns (new saturation, NewtonInfo).

    Raises NewtonFailure when the residual does not drop below
    newton_rtol * porevolume within max_newton iterations.
    """
    s_old = np.asarray(s, dtype=np.float64).ravel()
    n = grid.n_cells
    pv = grid.porosity * grid.cell_volume
    tol = newton_rtol * pv

    ca, cb = _face_lists(grid)
    F = np.concatenate([Fx.ravel(), Fy.ravel()])
    donor = np.where(F >= 0.0, ca, cb)

    q = well_source_vector(wells, grid)
    inj = np.maximum(q, 0.0)
    prod = np.minimum(q, 0.0)

    s_new = s_old.copy()
    for it in range(max_newton):
        _, _, fw = mobilities(s_new, fluid)
        wf = F * fw[donor]
        R = pv * (s_new - s_old)
        np.add.at(R, ca, dt * wf)
        np.add.at(R, cb, -dt * wf)
        R -= dt * inj
        R -= dt * prod * fw
        resid = float(np.max(np.abs(R)))
        if resid < tol:
            return s_new, NewtonInfo(it, resid)
        dfw = fractional_flow_derivative(s_new, fluid)
        dwf = F * dfw[donor]
        rows = np.concatenate([ca, cb, np.arange(n)])
        cols = np.concatenate([donor, donor, np.arange(n)])
        vals = np.concatenate([dt * dwf, -dt * dwf, pv - dt * prod * dfw])
        J = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
        try:
            delta = splu(J).solve(R)
        except RuntimeError as exc:
            raise NewtonFailure(f"transport Jacobian singular: {exc}") from exc
        if not np.all(np.isfinite(delta)):
            raise NewtonFailure("non-finite Newton update")
        s_new = np.clip(s_new - delta, 0.0, fluid.s_max)
    raise NewtonFailure(f"no convergence in {max_newton} Newton iterations")


@dataclass
class SimResult:
    oil_saturation: np.ndarray  # (ny, nx) at t_end
    oil_cut: np.ndarray  # (5, n_report), producer order as in the well tuple
    report_times: np.ndarray
    water_injected: float
    water_produced: float
    water_in_place: float
    n_steps: int
    n_newton_failures: int
    min_dt_used: float
    s_min_seen: float = 0.0
    s_max_seen: float = 0.0
    max_step_residual_rel: float = 0.0  # max over steps of |R|_inf / porevolume
    max_injector_flux_dev: float = 0.0  # worst |net injector outflux - IR| / IR
    max_free_cell_divergence: float = 0.0  # worst net outflux on source-free cells
    history: dict = field(default_factory=dict)

    @property
    def mass_balance_error(self) -> float:
        net = self.water_injected - self.water_produced
        return abs(self.water_in_place - net) / max(abs(net), 1e-300)


def simulate(
    G: np.ndarray,
    grid: ReservoirGrid,
    wells: tuple[Well, ...],
    fluid: FluidParams,
    t_end: float,
    n_report: int = 100,
    kappa0: float = KAPPA0_DEFAULT,
    dt_init: float | None = None,
    newton_rtol: float = 1e-12,
) -> SimResult:
    """Run the sequential solver from s_w = 0 and record producer oil cuts.

    Oil cut rows follow the producer order of the well tuple; the final
    field reported is the oil saturation 1 - s_w.
    """
    K = permeability(G, kappa0)
    s = np.zeros(grid.n_cells)
    producers = [w for w in wells if not w.is_injector]
    prod_cells = np.array([grid.cell_index(w.ix, w.iy) for w in producers])
    prod_rates = np.array([w.rate for w in producers])
    q = well_source_vector(wells, grid)
    injected_rate = float(np.maximum(q, 0.0).sum())

    report_times = np.linspace(t_end / n_report, t_end, n_report)
    report_dt = t_end / n_report
    dt = dt_init if dt_init is not None else t_end / 200.0
    dt = min(dt, report_dt)
    dt_min = t_end * 1e-10

    oil_cut = np.zeros((len(producers), n_report))
    cum_inj = 0.0
    cum_prod = 0.0
    t = 0.0
    n_steps = 0
    n_failures = 0
    min_dt_used = dt
    consecutive = 0
    pv = grid.porosity * grid.cell_volume
    inj_cells = np.array([grid.cell_index(w.ix, w.iy) for w in wells if w.is_injector])
    free_cells = q == 0.0
    s_lo, s_hi = 0.0, 0.0
    worst_resid = 0.0
    worst_inj_dev = 0.0
    worst_div = 0.0

    for k, tr in enumerate(report_times):
        while t < tr - 1e-12 * t_end:
            dt_eff = min(dt, tr - t)
            lam_w, lam_o, _ = mobilities(s, fluid)
            h = K.ravel() * (lam_w + lam_o)
            Tx, Ty = transmissibilities(h, grid)
            A, b = assemble_pressure(h, grid, wells)
            p = solve_pressure(A, b)
            Fx, Fy = face_fluxes(p, Tx, Ty, grid)
            net = cell_net_outflux(Fx, Fy, grid)
            if inj_cells.size:
                worst_inj_dev = max(
                    worst_inj_dev,
                    abs(float(net[inj_cells].sum()) - injected_rate)
                    / max(injected_rate, 1e-300),
                )
            if np.any(free_cells):
                worst_div = max(worst_div, float(np.max(np.abs(net[free_cells]))))
            try:
                s_next, newton = advance_saturation(
                    s, Fx, Fy, wells, dt_eff, grid, fluid, newton_rtol
                )
            except NewtonFailure:
                n_failures += 1
                consecutive = 0
                dt = dt_eff / 2.0
                if dt < dt_min:
                    raise RuntimeError(
                        f"time step underflow at t={t:.6g} (dt={dt:.3e}); "
                        f"s range [{s.min():.3g}, {s.max():.3g}]"
                    )
                continue
            _, _, fw_next = mobilities(s_next, fluid)
            cum_inj += dt_eff * injected_rate
            cum_prod += dt_eff * float(np.sum(fw_next[prod_cells] * (-prod_rates)))
            s = s_next
            t += dt_eff
            n_steps += 1
            min_dt_used = min(min_dt_used, dt_eff)
            s_lo = min(s_lo, float(s.min()))
            s_hi = max(s_hi, float(s.max()))
            worst_resid = max(worst_resid, newton.residual / pv)
            consecutive += 1
            if consecutive >= 5:
                dt = min(dt * 2.0, report_dt)
                consecutive = 0
        lam_w, lam_o, _ = mobilities(s[prod_cells], fluid)
        oil_cut[:, k] = lam_o / (lam_w + lam_o)

    return SimResult(
        oil_saturation=(1.0 - s).reshape(grid.ny, grid.nx),
        oil_cut=oil_cut,
        report_times=report_times,
        water_injected=cum_inj,
        water_produced=cum_prod,
        water_in_place=float(pv * s.sum()),
        n_steps=n_steps,
        n_newton_failures=n_failures,
        min_dt_used=min_dt_used,
        s_min_seen=s_lo,
        s_max_seen=s_hi,
        max_step_residual_rel=worst_resid,
        max_injector_flux_dev=worst_inj_dev,
        max_free_cell_divergence=worst_div,
    )


def simulate_batch(
    basis: KLBasis,
    Xi: np.ndarray,
    grid: ReservoirGrid,
    wells: tuple[Well, ...],
    fluid: FluidParams,
    t_end: float,
    n_report: int = 100,
) -> dict[str, np.ndarray]:
    """Simulate one run per row of Xi; returns stacked G, S, f arrays."""
    Xi = np.asarray(Xi, dtype=np.float64)
    n = Xi.shape[0]
    n_prod = sum(1 for w in wells if not w.is_injector)
    G = np.empty((n, grid.ny, grid.nx))
    S = np.empty((n, grid.ny, grid.nx))
    f = np.empty((n, n_prod, n_report))
    diag = {
        "mass_balance_error": np.empty(n),
        "s_min": np.empty(n),
        "s_max": np.empty(n),
        "max_step_residual_rel": np.empty(n),
        "max_injector_flux_dev": np.empty(n),
        "max_free_cell_divergence": np.empty(n),
        "first_report_oil_cut_min": np.empty(n),
    }
    for i in range(n):
        G[i] = kl_sample(basis, Xi[i])
        res = simulate(G[i], grid, wells, fluid, t_end, n_report, kappa0=basis.kappa0)
        S[i] = res.oil_saturation
        f[i] = res.oil_cut
        diag["mass_balance_error"][i] = res.mass_balance_error
        diag["s_min"][i] = res.s_min_seen
        diag["s_max"][i] = res.s_max_seen
        diag["max_step_residual_rel"][i] = res.max_step_residual_rel
        diag["max_injector_flux_dev"][i] = res.max_injector_flux_dev
        diag["max_free_cell_divergence"][i] = res.max_free_cell_divergence
        diag["first_report_oil_cut_min"][i] = res.oil_cut[:, 0].min()
    return {"G": G, "S": S, "f": f, "xi": Xi, "diagnostics": diag}
