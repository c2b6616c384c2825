"""
Exception hierarchy for the DivNet toolkit.

Every error raised on purpose by the services derives from ``DivNetError``.
The concrete classes also derive from ``ValueError`` or ``RuntimeError`` so that
callers catching the builtin families keep working.
"""

from typing import Optional


class DivNetError(Exception):
    """Root of all toolkit errors."""


class PreconditionError(DivNetError, ValueError):
    """An operation was called with arguments violating its precondition."""


class ConfigError(DivNetError, ValueError):
    """A configuration file or command-line override is invalid."""


class FormatError(DivNetError, ValueError):
    """
    A file does not match its declared format.

    Args:
        message (str): Human readable description.
        offset (int, optional): Byte offset at which the problem was detected.
        line (int, optional): 1-based line number for text formats.
    """

    def __init__(self, message: str, offset: Optional[int] = None, line: Optional[int] = None):
        self.offset = offset
        self.line = line
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        if line is not None:
            message = f"{message} (at line {line})"
        super().__init__(message)


class NumericError(DivNetError, RuntimeError):
    """A numerical routine failed to converge or produced non-finite values."""


class TrainingError(DivNetError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"{message} (epoch {epoch})")


class UsageError(ConfigError):
    """The command line could not be parsed."""
