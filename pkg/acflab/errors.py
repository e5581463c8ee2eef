"""
Exception hierarchy for the lab.

Every error carries the process exit code the CLI reports for it.
"""

from typing import List, Optional


class AcfLabError(ValueError):
    """Base class for all lab errors."""

    exit_code: int = 1


class InvalidParameterError(AcfLabError):
    """A numeric parameter is outside its domain (e.g. sd <= 0)."""


class InvalidInputError(AcfLabError):
    """Input data is empty, non-finite or otherwise unusable."""


class InvalidDesignError(AcfLabError):
    """The ANOVA design is rank deficient or leaves no residual df."""


class UnsupportedSizeError(AcfLabError):
    """The requested problem size is beyond what the algorithm supports."""


class InfeasibleParametersError(AcfLabError):
    """A back-solve has no real solution."""

    def __init__(self, message: str, discriminant: Optional[float] = None):
        super().__init__(message)
        self.discriminant = discriminant


class ConfigError(AcfLabError):
    """Run configuration is invalid (usage error)."""

    exit_code = 1


class OutputError(AcfLabError):
    """The output directory cannot be written."""

    exit_code = 2


class ParseError(AcfLabError):
    """A CSV/JSON input is malformed."""

    exit_code = 3

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CalibrationError(AcfLabError):
    """Agent calibration failed to meet tolerance within budget."""

    exit_code = 4

    def __init__(self, message: str, residuals: Optional[dict] = None):
        super().__init__(message)
        self.residuals = residuals or {}


class MissingInputError(AcfLabError):
    """Files a command depends on are absent."""

    exit_code = 5

    def __init__(self, missing: List[str]):
        super().__init__("missing inputs: " + ", ".join(missing))
        self.missing = list(missing)
