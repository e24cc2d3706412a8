"""Desk-scale numerics for Davies generators, quantum expanders and Metropolis maps."""

__version__ = "0.1.0"

from .errors import (CapacityError, ConvergenceError, DiagnosticError, SectorError, ThermalabError,
                     ValidationError)

__all__ = ["CapacityError", "ConvergenceError", "DiagnosticError", "SectorError", "ThermalabError",
           "ValidationError", "__version__"]
