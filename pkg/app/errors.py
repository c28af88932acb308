"""
Exception hierarchy.

Every error raised on purpose derives from TailNetError and from the builtin
it refines, so `except ValueError` keeps working for callers that only know
the builtin.

Exit-code contract used by the CLI:
    0  success
    1  internal error (anything not listed below)
    2  user / input error (EXIT_USER_ERRORS)
"""


class TailNetError(Exception):
    """Base class for all deliberate errors."""


class FormatError(TailNetError, ValueError):
    """Malformed CSV, bad magic bytes, unsupported version, truncated file."""


class DataError(TailNetError, ValueError):
    """Input parsed fine but leaves nothing to work with."""


class DimensionError(TailNetError, ValueError):
    """Shape mismatch or empty vector in numkernel."""


class ConfigError(TailNetError, ValueError):
    """Invalid run / training settings."""


class UsageError(TailNetError, RuntimeError):
    """API misuse: backward twice, empty session, unknown item id."""


class NumericError(TailNetError, ArithmeticError):
    """NaN or Inf produced while the tape runs in checked mode."""


class TrainingError(TailNetError, RuntimeError):
    """Training diverged."""


EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USER = 2

EXIT_USER_ERRORS: tuple[type[Exception], ...] = (
    FormatError,
    DataError,
    DimensionError,
    ConfigError,
    UsageError,
    FileNotFoundError,
    PermissionError,
    IsADirectoryError,
)
