"""Exception types shared across the package.

The CLI maps these onto process exit codes: UsageError -> 1,
DataError -> 2, NumericalError -> 3.
"""


class UsageError(Exception):
    """Bad flags or inconsistent command-line invocation."""


class DataError(Exception):
    """Malformed, missing, or degenerate input data."""


class NumericalError(Exception):
    """A computation produced non-finite values."""
