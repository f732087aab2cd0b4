"""
Exception hierarchy for the gapbridge system.
Every failure raised on purpose derives from GapBridgeError so the CLI can
map it to an exit code.
"""

from typing import Optional


class GapBridgeError(Exception):
    """Base class for all gapbridge errors."""


class DimensionError(GapBridgeError, ValueError):
    """Tensor or array shapes do not agree."""


class ConfigurationError(GapBridgeError, ValueError):
    """A configuration value is missing, malformed or out of range."""


class TrainingError(GapBridgeError, RuntimeError):
    """Training diverged or produced non-finite values."""

    def __init__(
        self, message: str, parameter: Optional[str] = None, stage: Optional[str] = None
    ):
        super().__init__(message)
        self.parameter = parameter
        self.stage = stage


class ParseError(GapBridgeError, ValueError):
    """An input file could not be parsed."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IngestionError(GapBridgeError, ValueError):
    """Parsed data violates the hourly continuity contract."""


class ProtocolError(GapBridgeError, ValueError):
    """The evaluation protocol cannot be satisfied (no windows, no history...)."""


class EncodingError(GapBridgeError, ValueError):
    """A daily frame cannot be encoded."""


class PredictionError(GapBridgeError, ValueError):
    """A masked prediction request is ill-posed."""


class CalibrationError(GapBridgeError, ValueError):
    """Conformal calibration inputs are insufficient."""


class StageError(GapBridgeError, RuntimeError):
    """A pipeline stage is missing a prerequisite."""

    def __init__(self, message: str, stage: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class CheckpointError(GapBridgeError, IOError):
    """A checkpoint file is malformed or incompatible."""


class ScheduleIndexError(GapBridgeError, IndexError):
    """A diffusion timestep lies outside [0, T]."""
