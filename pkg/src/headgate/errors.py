"""Exception hierarchy shared by every headgate module."""


class HeadgateError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(HeadgateError, ValueError):
    """An argument falls outside its documented domain."""


class ConsistencyError(HeadgateError, ValueError):
    """Inputs are individually valid but contradict each other."""


class ScheduleError(HeadgateError, ValueError):
    """A noise schedule violates its invariants."""


class OrderingError(HeadgateError, ValueError):
    """A scheduler step was asked to move forward in time."""


class DecoderError(HeadgateError, ValueError):
    """Decoder and latent dimensions do not line up."""


class DivergenceError(HeadgateError, ArithmeticError):
    """Expected time is infinite because no attempt can ever be accepted."""


class ConfigurationError(HeadgateError):
    """A session or run configuration cannot be satisfied."""


class DataError(HeadgateError):
    """A manifest or record is malformed.

    ``location`` carries the record index and field when known, e.g.
    ``"record[3].centroids"``.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
