"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class ConfigError(ValueError):
    """Invalid or internally inconsistent configuration."""


class DataFormatError(ValueError):
    """A dataset / prediction / checkpoint file is malformed."""


class TrainingError(RuntimeError):
    """Training aborted (e.g. non-finite loss)."""
