"""Exception hierarchy shared across the package."""


class MitopipeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(MitopipeError):
    """Input data violates a documented precondition (shape, range, NaN...)."""


class InvalidConfigError(MitopipeError):
    """A configuration value is out of its allowed range."""


class OutOfBoundsError(MitopipeError):
    """A window or coordinate falls outside the image and padding is disabled."""


class DegenerateInputError(MitopipeError):
    """Too little usable data to run an estimation (e.g. < 2 tissue pixels)."""


class ProtocolError(MitopipeError):
    """The remote predictor sent a malformed frame.

    ``offset`` is the absolute byte offset (within the response stream of the
    connection) at which the violation was detected.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class InferenceError(MitopipeError):
    """A predictor failed to produce a usable prediction."""


class PipelineError(MitopipeError):
    """A pipeline stage failed; ``stage`` names the failing stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
