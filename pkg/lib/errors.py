from typing import Any, Optional


class PsdFilterError(Exception):
    """Base exception for psd filtering errors."""
    pass


class InvalidModelError(PsdFilterError, ValueError):
    """Raised when model parameters violate their invariants."""
    pass


class DimensionError(PsdFilterError, ValueError):
    """Raised when a point or group does not match the model dimensions."""
    pass


class DegenerateModelError(PsdFilterError):
    """Raised when a model has zero or negative mass."""
    pass


class SingularPrecisionError(PsdFilterError):
    """Raised when a precision matrix cannot be factorized."""
    pass


class LearningError(PsdFilterError):
    """Raised when a learner cannot produce a model."""
    pass


class ZeroEvidenceError(DegenerateModelError):
    """Raised when an observation has zero evidence under the prior."""

    def __init__(self, step: int, observation: Any):
        self.step = step
        self.observation = observation
        super().__init__(f"Zero evidence at step {step} for observation {observation!r}")


class FilterError(PsdFilterError):
    """Raised when a filter step fails; carries the step index."""

    def __init__(self, step: int, cause: Optional[Exception] = None):
        self.step = step
        self.cause = cause
        super().__init__(f"Filter failed at step {step}: {cause}")


class WeightCollapseError(PsdFilterError):
    """Raised when all particle weights vanish."""
    pass


class KalmanError(PsdFilterError):
    """Raised when the innovation covariance is singular."""
    pass


class GridTooLargeError(PsdFilterError):
    """Raised when a dense grid exceeds the configured cell cap."""
    pass


class MissingSamplerError(PsdFilterError):
    """Raised when simulation needs a sampler the kernel does not provide."""
    pass


class ConfigError(PsdFilterError):
    """Raised when an experiment configuration is invalid."""
    pass
