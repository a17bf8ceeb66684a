"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2.
"""


class ExtractError(Exception):
    """Base class for all extractor errors."""


class UsageError(ExtractError):
    """Bad command-line usage or invalid option combinations."""


class DataError(ExtractError):
    """Malformed input, undefined alignment, or inconsistent shapes."""
