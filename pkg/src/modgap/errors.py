"""Shared exception types."""


class ModgapError(Exception):
    """Base class for all package-specific errors."""


class GuardExceeded(ModgapError):
    """A resource guard (modulus range, word count, dense size) was hit."""


class InvalidElement(ModgapError, ValueError):
    """A matrix is not a valid element of SL2(Z/q)."""


class AdmissibilityError(ModgapError, ValueError):
    """A letter sequence violates the shift's transition rule."""


class DomainError(ModgapError, ValueError):
    """An evaluation point lies outside the relevant branch domain."""


class NonContractingError(ModgapError, ValueError):
    """A letter fails uniform contraction on its admissible domain."""


class EstimationError(ModgapError, RuntimeError):
    """A numerical estimator could not bracket or certify its target."""


class ModulusMismatch(ModgapError, ValueError):
    """Two measures live on groups of different moduli."""


class ConvergenceError(ModgapError, RuntimeError):
    """An iteration hit its cap; carries the best estimate so far."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(ModgapError, ValueError):
    """Invalid run configuration; carries field-level diagnostics."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
