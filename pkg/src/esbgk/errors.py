"""Exception types shared across the solver."""


class ESBGKError(Exception):
    """Base class for all solver errors."""


class ConfigurationError(ESBGKError, ValueError):
    """Invalid grid, model, or run configuration.

    ``field`` names the offending setting (a dotted config path where one
    exists) so that callers can report it verbatim.
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParameterError(ESBGKError, ValueError):
    """A model parameter lies outside the range an operation supports."""


class NumericalError(ESBGKError, ArithmeticError):
    """Non-finite values encountered in a field or integrand."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message if index is None else f"{message} at index {index}")


class DegenerateStateError(ESBGKError):
    """Moments cannot define a Gaussian target (vacuum, zero temperature)."""

    def __init__(self, message, cell=None):
        self.cell = cell
        super().__init__(message if cell is None else f"{message} (cell {cell})")


class DataError(ESBGKError, ValueError):
    """Field data violates a precondition such as nonnegativity."""


class UnsupportedScenarioError(ESBGKError):
    """An analytic oracle was requested for a scenario it cannot describe."""


class SnapshotFormatError(ESBGKError):
    """A snapshot file is malformed, truncated, or of an unknown version."""


class SinkError(ESBGKError):
    """An output sink failed; partial output has been marked."""


class CoverageError(ESBGKError):
    """A time series does not cover the window an analysis needs."""
