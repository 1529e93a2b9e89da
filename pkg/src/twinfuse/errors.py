"""Exception hierarchy shared by every stage.

The CLI maps :class:`DataError` to exit code 1 and :class:`InvariantError`
to exit code 2.
"""


class TwinfuseError(Exception):
    """Base class for all package errors."""


class DataError(TwinfuseError, ValueError):
    """Bad input: malformed files, inconsistent config, missing samples."""


class InvariantError(TwinfuseError, RuntimeError):
    """An internal consistency check failed."""


class TrainingError(InvariantError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
