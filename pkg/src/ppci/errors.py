"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so keep the split between
configuration, data and numerical failures.
"""


class PpciError(Exception):
    """Base class for all package errors."""


class ConfigError(PpciError):
    """Invalid specification, hyperparameters or CLI configuration."""


class DataError(PpciError):
    """Malformed or inconsistent input data (files, arrays, strata)."""


class NumericalError(PpciError):
    """Numerical failure during optimization or estimation (NaN loss etc.)."""
