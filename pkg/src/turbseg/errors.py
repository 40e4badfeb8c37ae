"""Exception hierarchy shared by all pipeline stages.

Exit-code mapping used by the CLI: input problems -> 2, degenerate
geometry -> 3, anything else -> 4.
"""


class TurbsegError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 4


class InputError(TurbsegError):
    """Missing, malformed, or inconsistent input data."""

    exit_code = 2


class FlowFormatError(InputError):
    """A flow file does not follow the expected binary layout."""


class DimensionMismatchError(InputError):
    """Grids that must share a shape do not."""


class ConfigurationError(InputError):
    """A configuration value is outside its allowed range."""


class DegenerateGeometryError(TurbsegError):
    """Too few or too poorly conditioned correspondences for estimation."""

    exit_code = 3


class EstimationError(DegenerateGeometryError):
    """Model fitting failed on all attempted candidates."""


class PipelineStageError(TurbsegError):
    """Wraps an error with the stage name and frame where it occurred."""

    def __init__(self, stage, message, frame=None, cause=None):
        self.stage = stage
        self.frame = frame
        self.cause = cause
        where = f"stage '{stage}'" + (f", frame {frame}" if frame is not None else "")
        super().__init__(f"{where}: {message}")
        if cause is not None and isinstance(cause, TurbsegError):
            self.exit_code = cause.exit_code
