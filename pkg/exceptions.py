"""Error hierarchy shared by every package.

Each error carries the CLI exit code it maps to, so ``main.py`` can translate
any uncaught failure into a stable process status.
"""
from typing import Optional


class TransResNetError(Exception):
    """Base class for all domain errors."""

    exit_code: int = 1


class ConfigurationError(TransResNetError, ValueError):
    """Invalid configuration, head binding or hyperparameter."""

    exit_code = 3


class DimensionError(TransResNetError, ValueError):
    """Tensor shapes do not agree."""

    exit_code = 3

    def __init__(self, message: str, *shapes: tuple):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = shapes


class ShapeError(DimensionError):
    """An operation received a tensor of the wrong rank or size."""


class DomainError(TransResNetError, ValueError):
    """A value lies outside the domain an operation accepts."""

    exit_code = 3


class VocabIndexError(TransResNetError, IndexError):
    """An id lies outside its lookup table."""

    exit_code = 4

    def __init__(self, index: int, size: int, what: str = "id"):
        super().__init__(f"{what} {index} out of range for table of size {size}")
        self.index = index
        self.size = size


class TrainingError(TransResNetError, ArithmeticError):
    """Numeric failure during optimisation (NaN loss or gradient)."""

    exit_code = 5

    def __init__(self, message: str, *, parameter: Optional[str] = None,
                 task: Optional[str] = None, step: Optional[int] = None):
        details = []
        if parameter is not None:
            details.append(f"parameter={parameter}")
        if task is not None:
            details.append(f"task={task}")
        if step is not None:
            details.append(f"step={step}")
        if details:
            message = f"{message} [{', '.join(details)}]"
        super().__init__(message)
        self.parameter = parameter
        self.task = task
        self.step = step


class DataError(TransResNetError):
    """Dataset or artifact could not be read."""

    exit_code = 4


class ParseError(DataError):
    """A dataset line could not be parsed."""

    def __init__(self, message: str, *, line_no: int, path: Optional[str] = None):
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"{where}: {message}")
        self.line_no = line_no
        self.path = path


class DatasetValidationError(DataError):
    """A dataset invariant does not hold."""

    def __init__(self, message: str, *, example_id: Optional[str] = None):
        if example_id is not None:
            message = f"example {example_id!r}: {message}"
        super().__init__(message)
        self.example_id = example_id


class CompatibilityError(TransResNetError):
    """A checkpoint does not match the running code or the task it is applied to."""

    exit_code = 3
