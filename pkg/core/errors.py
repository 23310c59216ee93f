"""Exception hierarchy shared by every layer of the pipeline.

The CLI maps each family onto an exit code (see ``app.main``).
"""

from __future__ import annotations


class AtLstmError(Exception):
    """Base class for all errors raised by this project."""


class ShapeError(AtLstmError, ValueError):
    """Tensor or layer dimensions do not agree."""


class WidthError(ShapeError):
    """A model junction produces a width its consumer does not accept."""


class IndexRangeError(AtLstmError, IndexError):
    """A token or character id falls outside its table."""


class NumericalError(AtLstmError, ArithmeticError):
    """NaN/Inf appeared in a forward value, a gradient, or a gradient check."""


class TapeError(AtLstmError, RuntimeError):
    """backward() was called on something it cannot differentiate."""


class DataError(AtLstmError):
    """Corpus, price or dataset input is malformed."""

    def __init__(self, message: str, *, path: str = "", line: int | None = None):
        self.path = path
        self.line = line
        where = path
        if line is not None:
            where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ConfigError(AtLstmError):
    """Run configuration is invalid or references missing inputs."""


class CheckpointError(AtLstmError):
    """Checkpoint file is unreadable or inconsistent."""


class ChecksumError(CheckpointError):
    """Trailing CRC-32 does not match the file contents."""


class UnsupportedVersionError(CheckpointError):
    """Checkpoint was written by an unknown format version."""
