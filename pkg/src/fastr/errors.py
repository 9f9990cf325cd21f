"""Exception hierarchy shared across the package."""


class FastrError(Exception):
    """Base class for all library errors."""


class DimensionError(FastrError):
    """Array shapes or matrix contracts do not line up."""


class ConfigError(FastrError):
    """A model, term, or fit configuration value is invalid."""


class DegenerateDomainError(ConfigError):
    """A spline domain collapsed to a single point."""


class InfeasibleDfError(ConfigError):
    """Requested degrees of freedom outside the attainable range."""


class NotPositiveDefiniteError(FastrError):
    """Cholesky factorization hit a non-positive pivot."""


class SchemaError(FastrError):
    """A config document or data file does not match its declared schema."""


class DataError(FastrError):
    """A data value is unusable; message carries row/column context."""


class TrainingDiverged(FastrError):
    """Training loss became non-finite."""

    def __init__(self, epoch: int, step: int):
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite training loss at epoch {epoch}, step {step}")
