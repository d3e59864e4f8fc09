"""Exception hierarchy shared across the pipeline."""


class MacsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(MacsError, ValueError):
    """A configuration value violates a documented constraint."""


class InputError(MacsError, ValueError):
    """An operation received inputs outside its preconditions."""


class TrainingError(MacsError):
    """Model fitting could not proceed (e.g. a single class present)."""


class ConvergenceError(TrainingError):
    def __init__(self, message, gradient_norm):
        super().__init__(f"{message} (final gradient max-norm {gradient_norm:.3e})")
        self.gradient_norm = gradient_norm


class FoldingError(TrainingError):
    """A cross-validation fold lost one of the classes."""


class UndefinedMetricError(MacsError, ValueError):
    """A metric is undefined on the given data (e.g. zero denominator)."""


class DegenerateTestError(MacsError, ValueError):
    """A hypothesis test has zero variance and cannot be evaluated."""


class DataIntegrityError(MacsError, ValueError):
    """Patient data contradicts its own invariants."""


class StageError(MacsError):
    """A pipeline stage failed; carries the stage name for reporting."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
