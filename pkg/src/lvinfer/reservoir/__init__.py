"""Two-phase incompressible flow on a rectangular grid with KL-sampled permeability."""

from .grid import FluidParams, ReservoirGrid, Well, standard_wells
from .klfield import KLBasis, build_kl_basis, kl_sample, batch_kl_sample, permeability
from .flow import (
    NewtonFailure,
    SimResult,
    advance_saturation,
    assemble_pressure,
    face_fluxes,
    fractional_flow_derivative,
    mobilities,
    simulate,
    simulate_batch,
    solve_pressure,
    transmissibilities,
)

__all__ = [
    "FluidParams",
    "KLBasis",
    "NewtonFailure",
    "ReservoirGrid",
    "SimResult",
    "Well",
    "advance_saturation",
    "assemble_pressure",
    "batch_kl_sample",
    "build_kl_basis",
    "face_fluxes",
    "fractional_flow_derivative",
    "kl_sample",
    "mobilities",
    "permeability",
    "simulate",
    "simulate_batch",
    "solve_pressure",
    "standard_wells",
    "transmissibilities",
]
