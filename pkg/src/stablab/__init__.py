"""Numerical lab for the high-frequency inverse Schrödinger problem with partial data."""
from .errors import (CGOError, ConfigError, GeometryError, InvariantViolation, ResonanceError,
                     SolverError, StabLabError)
from .geometry import Grid, build_cutoffs, build_neighborhoods, build_patch, make_grid

__version__ = "0.1.0"

__all__ = [
    "CGOError", "ConfigError", "GeometryError", "InvariantViolation", "ResonanceError",
    "SolverError", "StabLabError", "Grid", "build_cutoffs", "build_neighborhoods",
    "build_patch", "make_grid", "__version__",
]
