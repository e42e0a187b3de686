"""Exception hierarchy shared by every stage of the pipeline."""


class CpdSelectError(Exception):
    """Base class for all package errors."""


class ArgumentError(CpdSelectError, ValueError):
    """Invalid argument or configuration value."""


class IndexBoundsError(ArgumentError, IndexError):
    """A discrete code lies outside its declared cardinality."""

    def __init__(self, message, variable=None, row=None):
        super().__init__(message)
        self.variable = variable
        self.row = row


class CapacityError(CpdSelectError):
    """An exact enumeration would exceed the configured cell cap."""


class NumericalError(CpdSelectError, FloatingPointError):
    """A NaN or other non-finite value appeared during fitting."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class FitError(CpdSelectError):
    """Fitting failed inside a cross-validation fold or remodeling step."""

    def __init__(self, message, fold=None):
        super().__init__(message)
        self.fold = fold


class SelectionError(CpdSelectError):
    """No candidate feature could be evaluated."""


class ParseError(CpdSelectError, ValueError):
    """Malformed CSV input."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class SchemaError(CpdSelectError, ValueError):
    """Schema file is missing or declares an unknown column type."""


class InvariantError(CpdSelectError, ValueError):
    """A probability model violates its simplex constraints."""
