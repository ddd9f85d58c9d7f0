class QBatteryError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(QBatteryError, ValueError):
    pass


class EigensolverError(QBatteryError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class KrylovError(QBatteryError):
    """Residual tolerance could not be met at the maximum subspace size."""


class SectorTooLargeError(QBatteryError):
    pass


class ConservationError(QBatteryError):
    pass


class WindowLimitedError(QBatteryError):
    """A maximum sat on the right edge of the time window even after extension."""
