class RiskScucError(Exception):
    """Base class for package errors."""


class CaseFormatError(RiskScucError, ValueError):
    """A case or history file could not be parsed.

    ``location`` carries a line number or field path when known.
    """

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ValidationError(RiskScucError, ValueError):
    """Input data violates a model invariant."""

    def __init__(self, message: str, invariant: str | None = None):
        self.invariant = invariant
        super().__init__(f"[{invariant}] {message}" if invariant else message)


class SolverError(RiskScucError, RuntimeError):
    """A solve did not produce a usable result."""

    def __init__(self, message: str, status: str | None = None):
        self.status = status
        super().__init__(message)
