"""Exception hierarchy shared across the package.

Each top-level class maps onto one CLI exit code (see ``aggdr.cli``).
"""


class AggDRError(Exception):
    """Base class for all package errors."""


class ModelValidationError(AggDRError):
    """Input data violates a model invariant."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class InfeasibleBalanceError(ModelValidationError):
    """The horizon energy-balance row cannot be met inside the flex bounds."""


class NoGeneratorsInRegion(ModelValidationError):
    pass


class SolverError(AggDRError):
    """The LP backend failed."""


class InfeasibleModel(SolverError):
    pass


class NumericalFailure(SolverError):
    def __init__(self, message, status=None, diagnostics=None):
        super().__init__(message)
        self.status = status
        self.diagnostics = diagnostics or {}


class NonConvergence(AggDRError):
    def __init__(self, message, gap=None, result=None):
        super().__init__(message)
        self.gap = gap
        self.result = result


class DegenerateStorage(AggDRError):
    pass


class DataError(AggDRError):
    """Malformed or missing input files."""
