"""Exception types shared across the package."""


class RadioSRError(Exception):
    """Base class for all errors raised by this package."""


class GridError(RadioSRError):
    """Invalid grid geometry or mismatched grids."""


class ResolutionError(GridError):
    """Resolutions that are required to nest do not divide evenly."""


class ValidationError(RadioSRError):
    """Tensor or config content violates a contract."""


class ContainerError(RadioSRError):
    """A tensor container file is malformed or inconsistent."""


class SceneError(RadioSRError):
    """Scene geometry is invalid."""


class ScenePlacementError(SceneError):
    """Scene generation could not place boxes within the retry budget."""


class DatasetError(RadioSRError):
    """Dataset build or load failed validation."""


class UndefinedMetricError(RadioSRError):
    """A metric is undefined for the given inputs (e.g. all-zero reference)."""


class TrainingDiverged(RadioSRError):
    """A training phase produced a non-finite loss."""

    def __init__(self, message: str, state_path: str | None = None):
        super().__init__(message)
        self.state_path = state_path


class ConfigError(RadioSRError):
    """Invalid configuration value."""
