"""Exceptions raised by dfl-sentinel.

All exceptions derive from :class:`DFLSentinelError`."""


class DFLSentinelError(Exception):
    """Base class for all dfl-sentinel errors"""


class ParamsError(DFLSentinelError):
    """Base class for layered parameter errors"""


class ShapeError(ParamsError, ValueError):
    """Raised when parameter sets or batches are not shape-compatible"""


class WeightsError(ParamsError, ValueError):
    """Raised on negative or non-finite averaging weights"""


class FormatError(DFLSentinelError):
    """Raised on malformed binary input - IDX data files or LPRM
    parameter blobs"""


class DataError(DFLSentinelError):
    """Base class for dataset errors"""


class InsufficientSamples(DataError):
    """Raised when a dataset is too small for the requested partition"""


class DatasetNotFound(DataError):
    """Raised when IDX files cannot be located"""


class NumericalError(DFLSentinelError):
    """Raised on non-finite activations, losses or parameters"""


class AggregationError(DFLSentinelError):
    """Base class for aggregation errors"""


class DegenerateAggregation(AggregationError):
    """Raised when aggregation weights sum to zero"""


class InsufficientModels(AggregationError):
    """Raised when an aggregator receives too few models"""


class EmptyHistory(AggregationError, ValueError):
    """Raised when a loss distance is asked of an empty loss history"""


class AttackError(DFLSentinelError):
    """Base class for attack errors"""


class TriggerError(AttackError, ValueError):
    """Raised when a backdoor trigger does not fit the dataset"""


class MetricsError(DFLSentinelError, ValueError):
    """Raised on malformed confusion matrices or unknown metric options"""


class ConfigError(DFLSentinelError, ValueError):
    """Raised on experiment configuration errors.

    :ivar errors: One message per offending field, each prefixed with the
      dotted field path."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super(ConfigError, self).__init__('; '.join(self.errors))


class OutputError(DFLSentinelError):
    """Base class for output and report errors"""


class OutputExistsError(OutputError):
    """Raised when an output directory already holds results"""


class PlotError(OutputError):
    """Raised when summaries cannot be charted together"""
