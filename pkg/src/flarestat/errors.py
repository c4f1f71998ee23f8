"""Exception hierarchy shared by every subpackage."""


class FlareStatError(Exception):
    """Base class for all package errors."""


class ValidationError(FlareStatError, ValueError):
    """Input data or arguments violate a documented contract."""


class ParameterError(ValidationError):
    """Distribution or kernel parameters outside their valid domain."""


class DomainError(ValidationError):
    """A value lies outside the support of a constraint transform."""


class DataError(ValidationError):
    """A malformed record in an input file.

    Carries the 1-based data row number (header excluded) and the column name.
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class NumericalError(FlareStatError, ArithmeticError):
    """A numerical procedure failed (Cholesky breakdown, non-convergence)."""


class NonFiniteError(NumericalError):
    """A log-density evaluation produced a non-finite value."""

    def __init__(self, message, param=None):
        self.param = param
        super().__init__(message if param is None else f"{message} (parameter {param!r})")


class InitializationError(NumericalError):
    """No finite starting point found for a chain."""

    def __init__(self, message, param=None):
        self.param = param
        super().__init__(message if param is None else f"{message} (parameter block {param!r})")


class ConvergenceError(NumericalError):
    """Convergence diagnostics exceed their thresholds."""

    def __init__(self, message, params=()):
        self.params = tuple(params)
        super().__init__(message)
