"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1 (usage),
DataFormatError -> 2 (data), everything else -> 3 (runtime).
"""


class PolyqeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PolyqeError):
    """Inconsistent or invalid run configuration."""


class DataFormatError(PolyqeError):
    """Malformed input data: datasets, embedding files, checkpoints."""
