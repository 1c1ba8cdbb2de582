"""Error types shared across the refiner

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class RefinerError(Exception):
    """Base class for all engine errors"""

    exit_code: int = 1


class InvalidInputError(RefinerError, ValueError):
    """Input violates a documented precondition"""

    exit_code = 3


class ShapeError(InvalidInputError):
    """Operand shapes are incompatible"""


class ConfigError(RefinerError, ValueError):
    """Configuration is inconsistent or incomplete"""

    exit_code = 3


class ParseError(RefinerError):
    """A file could not be parsed

    Carries the offending path and, when known, the 1-based line and the
    character offset inside that line.
    """

    exit_code = 3

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        offset: Optional[int] = None,
    ):
        self.path = path
        self.line = line
        self.offset = offset
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if offset is not None:
            location.append(f"offset {offset}")
        prefix = f"{':'.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class FormatVersionError(ParseError):
    """File declares a format version this build does not read"""


class NumericError(RefinerError, ArithmeticError):
    """A computation produced NaN or infinity"""

    exit_code = 4

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
