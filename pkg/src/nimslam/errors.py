"""Exception types raised by the SLAM engine."""


class NimslamError(Exception):
    """Base class for all package errors."""


class ConfigError(NimslamError, ValueError):
    """Invalid configuration value or malformed config file."""


class BehindCameraError(NimslamError, ValueError):
    """A point with non-positive camera-frame depth was projected."""


class InvalidDepthError(NimslamError, ValueError):
    """A non-positive depth was passed where depth > 0 is required."""


class ShapeError(NimslamError, ValueError):
    """Array arguments have incompatible shapes."""


class DegenerateBatchError(NimslamError, ValueError):
    """An empty pixel batch (or empty mask) was passed to a loss."""


class UndefinedFlowError(NimslamError, ValueError):
    """No valid projections were available to compute a flow score."""


class GradientError(NimslamError, RuntimeError):
    """A non-finite gradient was produced; carries the parameter group name."""

    def __init__(self, group: str, message: str = ""):
        self.group = group
        super().__init__(message or f"non-finite gradient in parameter group '{group}'")


class InitializationFailure(NimslamError, RuntimeError):
    """Map/pose initialization diverged (non-finite loss)."""


class TrackingFailure(NimslamError, RuntimeError):
    """Tracking was lost; carries the frame index where it happened."""

    def __init__(self, frame_index: int, message: str = ""):
        self.frame_index = frame_index
        super().__init__(message or f"tracking failure at frame {frame_index}")


class ParseError(NimslamError, ValueError):
    """Malformed line in an input file; carries the line number."""

    def __init__(self, path, line_number: int, message: str):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class MissingInputError(NimslamError, FileNotFoundError):
    """A required input file or directory is absent."""


class InsufficientDataError(NimslamError, ValueError):
    """Not enough associated samples to compute a metric."""


class EmptyMeshError(NimslamError, ValueError):
    """A mesh operation received an empty mesh."""
