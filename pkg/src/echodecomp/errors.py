"""Exception hierarchy.

The CLI maps these onto exit codes: parameter problems are usage errors,
data/layout problems are data errors, solver blow-ups are numerical errors.
"""


class EchodecompError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class ParameterError(EchodecompError, ValueError):
    """Invalid argument value (bin size, rank, cluster count, ...)."""

    exit_code = 1


class DataError(EchodecompError, ValueError):
    """Input data violates a structural requirement."""

    exit_code = 2


class CoordinateError(DataError):
    """Non-monotone or otherwise malformed coordinate axis."""


class IncompleteDataError(DataError):
    """Missing cells where complete data are required."""


class UnfillableError(DataError):
    """A fill policy cannot produce a value for some cell."""


class LayoutError(DataError):
    """Vector length or shape does not match a flattening layout."""


class DomainError(DataError):
    """Values outside the solver's domain (e.g. negative entries for NMF)."""


class NumericalError(EchodecompError, ArithmeticError):
    """NaN/inf produced by a solver or a factorization failure."""

    exit_code = 3

    def __init__(self, message, seed=None):
        super().__init__(message)
        self.seed = seed


class DegenerateError(EchodecompError, ValueError):
    """Statistic undefined for the given input (e.g. zero variance)."""

    exit_code = 2
