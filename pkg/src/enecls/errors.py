"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class EneClsError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(EneClsError):
    """Bad command line or missing required argument."""


class ConfigError(EneClsError):
    """Configuration value outside its documented range."""


class DataError(EneClsError):
    """Malformed or inconsistent input data."""


class TaxonomyError(DataError):
    """Invalid taxonomy definition or unknown label."""


class CheckpointError(DataError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


class NumericError(EneClsError):
    """Non-finite loss or gradient encountered during training."""
