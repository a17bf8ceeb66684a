"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class EpbError(Exception):
    """Base class for all toolkit errors."""


class UsageError(EpbError):
    """Bad command-line usage or invalid option combinations."""


class DataError(EpbError):
    """Malformed or inconsistent input data (files, schemas, spans)."""


class NumericError(EpbError):
    """Numeric failure during training or evaluation (NaN loss, non-finite input)."""
