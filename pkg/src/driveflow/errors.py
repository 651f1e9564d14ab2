"""Exception hierarchy shared by every driveflow module."""


class DriveflowError(Exception):
    """Base class for all errors raised by driveflow."""


class DimensionError(DriveflowError, ValueError):
    """Operand shapes are incompatible with an operation."""


class EmptyInputError(DriveflowError, ValueError):
    """An operation received an empty collection where at least one item is required."""


class ContractError(DriveflowError, ValueError):
    """A precondition on arguments was violated."""


class ConfigError(DriveflowError, ValueError):
    """Invalid model, training, or run configuration."""


class TrainingError(DriveflowError, ArithmeticError):
    """Numerical failure during optimization (non-finite loss or gradient)."""


class ParseError(DriveflowError, ValueError):
    """Malformed file content. ``location`` names the line or byte offset."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class TruncationError(ParseError):
    """File ended before the declared payload was complete."""


class CheckpointError(DriveflowError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass
