"""Dynamical simulation of an ideal spin-1/2 measurement by a Curie-Weiss magnet in a phonon bath."""

from .model import (
    REFERENCE_PARAMS,
    ModelParams,
    compute_timescales,
    magnetization_grid,
    tau_irreversibility,
    tau_reduction,
    tau_registration,
    validate_regime,
)

__version__ = "0.1.0"

__all__ = [
    "REFERENCE_PARAMS",
    "ModelParams",
    "compute_timescales",
    "magnetization_grid",
    "tau_irreversibility",
    "tau_reduction",
    "tau_registration",
    "validate_regime",
]
