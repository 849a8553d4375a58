"""Exception taxonomy. Every raise in the package uses one of these."""


class MaxVitError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MaxVitError):
    """Shapes are incompatible for the requested operation."""


class PartitionError(MaxVitError):
    """A spatial extent is not divisible by the window or grid size."""


class NumericError(MaxVitError):
    """A computation produced or received non-finite values."""


class DataError(MaxVitError):
    """Input data is malformed (bad labels, corrupt serialized tensor, ...)."""


class ConfigError(MaxVitError):
    """A model or run configuration is invalid."""
