"""Failure classes shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 1, data
problems exit 2, numerical faults exit 3.
"""


class TrackProbeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(TrackProbeError, ValueError):
    """An argument violates an operation's preconditions."""


class InvalidConfigError(TrackProbeError, ValueError):
    """A configuration object or file is malformed or inconsistent."""


class InvalidStateError(TrackProbeError, RuntimeError):
    """An operation was called out of order (e.g. backward without cache)."""


class CorruptFileError(TrackProbeError):
    """A serialized file failed validation.

    ``offset`` is the byte offset at which the problem was detected,
    when known.
    """

    def __init__(self, message: str, *, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointMismatchError(TrackProbeError):
    """A checkpoint has the wrong kind or an incompatible format version."""


class UndefinedMetricError(TrackProbeError):
    """A metric has no evaluable frames and therefore no value."""


class TrainingFaultError(TrackProbeError):
    """A numerical fault (non-finite gradient/loss) occurred during training.

    ``step`` records the global optimizer step at which the fault was seen.
    """

    def __init__(self, message: str, *, step: int | None = None):
        if step is not None:
            message = f"{message} (at training step {step})"
        super().__init__(message)
        self.step = step
