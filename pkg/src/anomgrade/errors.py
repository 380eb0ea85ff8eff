"""Exception types shared across the pipeline."""


class GradingError(Exception):
    """Base class for all pipeline errors."""


class LoadError(GradingError):
    """A required file, image, or weight source could not be loaded."""


class ValidationError(GradingError):
    """Data violates a declared invariant (shapes, ranges, disjointness)."""


class CapacityError(GradingError):
    """A sampling request exceeds what the dataset can provide."""


class ArtifactError(GradingError):
    """A persisted artifact is missing, corrupt, or of an incompatible version."""


class BankMismatchError(GradingError):
    """A reference bank does not belong to the model used for scoring."""


class MetricError(GradingError):
    """A metric is undefined for the given inputs (zero variance, single class)."""


class ConfigError(GradingError):
    """Run configuration is invalid; message carries the offending key path."""


class OrderingError(GradingError):
    """A pipeline stage was invoked before its prerequisite stage."""


class TrainingError(GradingError):
    """Training aborted (divergence, empty pools, bad stage)."""


class ScorerError(GradingError):
    """The text-image scorer failed or is unavailable."""
