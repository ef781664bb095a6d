"""Exception hierarchy shared across the pipeline."""


class MitodetError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(MitodetError):
    """Invalid configuration value or unknown configuration key."""


class DataError(MitodetError):
    """Missing, malformed or inconsistent input data."""


class NumericalError(MitodetError):
    """Non-finite values encountered during optimization or inference."""
