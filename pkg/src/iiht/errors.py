"""Exception types shared across the package."""


class IIHTError(Exception):
    """Base class for all package errors."""


class DimensionError(IIHTError, ValueError):
    """Raised when tensor shapes do not conform."""


class NumericError(IIHTError, ArithmeticError):
    """Raised on non-finite values where finite ones are required."""


class ContractError(IIHTError, ValueError):
    """Raised when a caller violates an operation's preconditions."""


class ValidationError(IIHTError, ValueError):
    """Raised when a loaded record violates a data invariant."""

    def __init__(self, message, record_id=None, line=None):
        super().__init__(message)
        self.record_id = record_id
        self.line = line


class ConfigError(IIHTError, ValueError):
    """Raised for out-of-range configuration values."""


class NonFiniteGradient(NumericError):
    def __init__(self, path):
        super().__init__(f"non-finite gradient in parameter {path!r}")
        self.path = path


class TrainingDiverged(NumericError):
    def __init__(self, epoch, step, checkpoint=None):
        super().__init__(f"loss became non-finite at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.checkpoint = checkpoint
