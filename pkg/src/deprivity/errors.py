"""Exception hierarchy shared by all modules."""


class DeprivityError(Exception):
    """Base class for every error raised by this package."""


class GeoJSONError(DeprivityError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CSVError(DeprivityError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        if where:
            message = f"{message} at {', '.join(where)}"
        super().__init__(message)
        self.row = row
        self.column = column


class FetchError(DeprivityError):
    """Non-retryable failure talking to the attribute API."""

    def __init__(self, message, status=None, body_prefix=None):
        super().__init__(message)
        self.status = status
        self.body_prefix = body_prefix


class RetryableFetchError(FetchError):
    """Network-level failure that survived every retry."""


class JoinError(DeprivityError):
    pass


class MissingDataError(DeprivityError):
    pass


class WeightsError(DeprivityError):
    pass


class DegenerateDataError(DeprivityError):
    """Zero variance, constant columns and similar degenerate inputs."""


class ConvergenceError(DeprivityError):
    pass


class ConfigError(DeprivityError):
    pass


class StageError(DeprivityError):
    """Pipeline failure tagged with the city and stage that raised it."""

    def __init__(self, city, stage, cause):
        super().__init__(f"[{city}] stage={stage}: {cause}")
        self.city = city
        self.stage = stage
        self.cause = cause
