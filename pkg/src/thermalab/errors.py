"""Exception types shared across thermalab."""


class ThermalabError(Exception):
    """Base class for library errors."""


class ValidationError(ThermalabError, ValueError):
    """Input violates a documented precondition."""


class CapacityError(ThermalabError, MemoryError):
    """Requested problem size exceeds a dense-storage guard."""


class ConvergenceError(ThermalabError, RuntimeError):
    """An iterative routine failed to reach its tolerance."""


class DiagnosticError(ThermalabError, RuntimeError):
    """A runtime invariant check (trace drift, residual) failed."""


class SectorError(ThermalabError, KeyError):
    """A block sector references an energy bin that does not exist."""
