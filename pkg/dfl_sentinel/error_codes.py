"""Process exit codes returned by the ``dfl-sentinel`` command line."""

from .exceptions import ParamsError, FormatError, \
    DataError, NumericalError, AggregationError, AttackError, ConfigError, \
    MetricsError, OutputError, OutputExistsError, PlotError

DFL_OK = 0
DFL_ERROR_UNKNOWN = 1
DFL_ERROR_USAGE = 2
DFL_ERROR_CONFIG = 3
DFL_ERROR_DATA = 4
DFL_ERROR_FORMAT = 5
DFL_ERROR_PARAMS = 6
DFL_ERROR_NUMERICAL = 7
DFL_ERROR_AGGREGATION = 8
DFL_ERROR_ATTACK = 9
DFL_ERROR_OUTPUT = 10
DFL_ERROR_OUTPUT_EXISTS = 11
DFL_ERROR_PLOT = 12
DFL_ERROR_METRICS = 13

# Most specific first
_CODES = (
    (OutputExistsError, DFL_ERROR_OUTPUT_EXISTS),
    (PlotError, DFL_ERROR_PLOT),
    (OutputError, DFL_ERROR_OUTPUT),
    (ConfigError, DFL_ERROR_CONFIG),
    (FormatError, DFL_ERROR_FORMAT),
    (DataError, DFL_ERROR_DATA),
    (ParamsError, DFL_ERROR_PARAMS),
    (NumericalError, DFL_ERROR_NUMERICAL),
    (AggregationError, DFL_ERROR_AGGREGATION),
    (AttackError, DFL_ERROR_ATTACK),
    (MetricsError, DFL_ERROR_METRICS),
)


def exit_code_for(exc):
    """Map an exception to its process exit code.

    :param exc: Raised exception.
    :type exc: :py:class:`BaseException`
    :rtype: int"""
    for exc_cls, code in _CODES:
        if isinstance(exc, exc_cls):
            return code
    return DFL_ERROR_UNKNOWN
