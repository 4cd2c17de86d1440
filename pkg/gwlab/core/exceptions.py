"""
Custom exception classes for better error handling.

Every failure a service reports derives from GwLabError so the CLI can map
domain errors to exit code 1 while usage errors keep exit code 2.
"""

from typing import Iterable, Optional


class GwLabError(Exception):
    """Base class for all gwlab domain errors."""

    pass


class InvalidShape(GwLabError):
    """Exception raised when tensor shapes do not line up."""

    pass


class InvalidLabel(GwLabError):
    """Exception raised for a class label outside the distribution."""

    pass


class NumericalFailure(GwLabError):
    """Exception raised when a loss or tensor becomes NaN or infinite."""

    pass


class InvalidSpec(GwLabError):
    """Exception raised for out-of-range generation or split specs."""

    pass


class InvalidTarget(GwLabError):
    """Exception raised for a target id that is not an object of the scene."""

    pass


class InvalidCategory(GwLabError):
    """Exception raised for a category outside the lexicon."""

    pass


class InvalidBelief(GwLabError):
    """Exception raised for a belief vector that is not a distribution."""

    pass


class InvalidScene(GwLabError):
    """Exception raised when a scene cannot support the requested operation."""

    pass


class InvalidData(GwLabError):
    """Exception raised for empty or unusable training data."""

    pass


class EmptyInput(GwLabError):
    """Exception raised when a metric is asked about zero games."""

    pass


class ParseError(GwLabError):
    """Exception raised for a malformed line in a JSON-lines file."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(GwLabError):
    """Exception raised when a parsed record violates a record invariant."""

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class JoinError(GwLabError):
    """Exception raised when two game logs do not cover the same games."""

    def __init__(self, missing: Iterable[str]) -> None:
        self.missing = sorted(missing)
        preview = ", ".join(self.missing[:10])
        more = f" (+{len(self.missing) - 10} more)" if len(self.missing) > 10 else ""
        super().__init__(f"game sets differ; unmatched game ids: {preview}{more}")


class IncompatibleCheckpoint(GwLabError):
    """Exception raised for checkpoints that cannot be loaded or combined."""

    pass


class ConfigError(GwLabError):
    """Exception raised for invalid run configuration files or values."""

    def __init__(self, message: str, key: Optional[str] = None) -> None:
        self.key = key
        super().__init__(message)
