"""Exception hierarchy shared by every stage."""

from __future__ import annotations


class PainStatesError(Exception):
    """Base class for all toolkit errors."""


class ParseError(PainStatesError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(ParseError):
    """A response value falls outside its question's declared scale."""


class SchemaError(ParseError):
    """Unknown question id, instrument or column layout."""


class ConfigError(PainStatesError, ValueError):
    def __init__(self, message: str, field: str | None = None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class CompletenessError(PainStatesError, ValueError):
    pass


class DegenerateScaleError(PainStatesError, ValueError):
    def __init__(self, question_id: str):
        self.question_id = question_id
        super().__init__(f"zero standard deviation for question {question_id!r}")


class InsufficientDataError(PainStatesError, ValueError):
    pass


class InfeasibleKError(PainStatesError, ValueError):
    pass


class UndefinedScoreError(PainStatesError, ValueError):
    pass


class DimensionError(PainStatesError, ValueError):
    pass


class InvariantError(PainStatesError, RuntimeError):
    """An internal invariant was breached; the CLI maps this to exit code 3."""
