"""Compressible power-law and Bingham fluid solvers on periodic grids."""

__version__ = "0.1.0"

from .constitutive import FluidParams  # noqa: E402
from .errors import (  # noqa: E402
    Blowup,
    CFLViolation,
    ConfigError,
    FixedPointDiverged,
    GridMismatch,
    MassLoss,
    NonConvergence,
    SingularEvaluation,
    VacuumFloor,
    ViscoplastError,
)
from .field import PeriodicField, PeriodicGrid  # noqa: E402

__all__ = [
    "FluidParams",
    "PeriodicGrid",
    "PeriodicField",
    "ViscoplastError",
    "SingularEvaluation",
    "NonConvergence",
    "CFLViolation",
    "VacuumFloor",
    "FixedPointDiverged",
    "Blowup",
    "MassLoss",
    "GridMismatch",
    "ConfigError",
]
