"""Exception types shared across the package."""


class DreamNetError(Exception):
    """Base class for all package errors."""


class ShapeError(DreamNetError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class InputError(DreamNetError, ValueError):
    """An input value violates an operation's precondition."""


class ConfigError(DreamNetError, ValueError):
    """A configuration value is inconsistent or out of range."""


class ContractError(DreamNetError, RuntimeError):
    """An API was called in a way its contract forbids."""


class NumericalError(DreamNetError, ArithmeticError):
    """A computation produced non-finite values."""


class CheckpointError(DreamNetError, RuntimeError):
    """A checkpoint file is missing, corrupt, or shape-incompatible."""


class SchemaError(DreamNetError, ValueError):
    """A data file does not conform to its expected schema."""


class UndefinedCorrelationError(DreamNetError, ValueError):
    """Correlation is undefined (a constant column)."""
