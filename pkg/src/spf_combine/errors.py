"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes:
``ConfigError`` -> 1, ``DataError`` -> 2, ``BackendError`` -> 3.
"""


class SpfCombineError(Exception):
    """Base class for all package errors."""


class ConfigError(SpfCombineError):
    pass


class DataError(SpfCombineError):
    pass


class CsvFormatError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PeriodFormatError(DataError, ValueError):
    pass


class DuplicateCellError(DataError):
    pass


class AlignmentError(DataError):
    pass


class WindowError(DataError):
    pass


class ColdStartError(WindowError):
    """No data precedes the target period.

    ``window`` holds the (empty-history) window so callers can still fall
    back to a combination of the current forecasts.
    """

    def __init__(self, message, window=None):
        super().__init__(message)
        self.window = window


class MetricError(DataError, ValueError):
    pass


class InsufficientCrossSection(MetricError):
    pass


class UndefinedMetric(MetricError):
    pass


class DegenerateStandardization(MetricError):
    pass


class EstimationError(DataError):
    pass


class CollinearityError(EstimationError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class BackendError(SpfCombineError):
    pass


class BackendConfigError(BackendError, ConfigError):
    pass


class TransientBackendError(BackendError):
    """Retryable failure: transport error, rate limit or 5xx."""


class OutputParseError(BackendError, ValueError):
    pass
