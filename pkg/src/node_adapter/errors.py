"""Exception taxonomy shared by all modules.

The CLI maps these onto process exit codes; see cli.EXIT_CODES.
"""


class NodeAdapterError(Exception):
    """Base class for all package errors."""


class ShapeError(NodeAdapterError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateInputError(NodeAdapterError):
    """Numerically degenerate data (zero rows, vanishing norms)."""


class CapacityError(NodeAdapterError):
    """A class has too few rows for the requested operation."""


class UsageError(NodeAdapterError):
    """API or flag misuse (bad argument values, tape mixing, unknown keys)."""


class FormatError(NodeAdapterError):
    """Malformed binary or text file. Carries the byte offset of the defect."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(NodeAdapterError):
    """Non-finite values appeared during integration or training."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class DataMismatchError(NodeAdapterError):
    """Labels or class tables disagree between two inputs."""
