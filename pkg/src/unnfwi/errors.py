"""Exception types shared across the package."""


class UnnFwiError(Exception):
    """Base class for all package errors."""


class GeometryError(UnnFwiError, ValueError):
    """Transducer layout does not fit the computational grid."""


class StabilityError(UnnFwiError, ValueError):
    """Time step violates the CFL bound of the explicit scheme."""


class NumericError(UnnFwiError, ArithmeticError):
    """Non-finite values appeared during a simulation or an optimization."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ArchitectureError(UnnFwiError, ValueError):
    """Network tensors are inconsistent with the architecture descriptor."""


class UsageError(UnnFwiError, RuntimeError):
    """An object was used outside of its valid lifecycle (e.g. a stale tape)."""


class ConfigError(UnnFwiError, ValueError):
    """Experiment configuration failed validation."""
