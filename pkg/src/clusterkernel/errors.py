"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.
"""


class ClusterKernelError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(ClusterKernelError):
    """Invalid configuration: bad parameter value, unknown config key."""


class DataError(ClusterKernelError):
    """Malformed input data: ragged CSV, label mismatch, bad file format."""


class NumericError(ClusterKernelError):
    """Numerical failure: prior inversion, degenerate solve."""
