"""Exception hierarchy.

Each class maps onto one CLI exit code (see :mod:`quasiboot.cli`).
"""


class QuasibootError(Exception):
    """Base class for all package errors."""


class ContractError(QuasibootError, ValueError):
    """Inputs violate a documented shape or domain contract."""


class FormulaError(QuasibootError, ValueError):
    """A model formula could not be parsed."""

    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class IngestError(QuasibootError, ValueError):
    """Input data could not be turned into an observation table."""


class FitError(QuasibootError, RuntimeError):
    """Base class for model fitting failures."""


class SingularDesignError(FitError):
    """The fixed-effect design matrix is numerically rank deficient."""


class SeparationError(FitError):
    """Coefficients diverge, typically from complete separation."""


class NonConvergenceError(FitError):
    """The optimizer did not converge.

    The last iterate is kept on ``last_iterate`` for diagnostics.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class BootstrapAbortError(QuasibootError, RuntimeError):
    """Too many bootstrap replicates failed to refit."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or {}
