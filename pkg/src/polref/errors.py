from __future__ import annotations

from dataclasses import dataclass


class PolicyError(Exception):
    """Base class for every error raised by this package."""


class ResolutionError(PolicyError):
    """A name (role, service, entity, device) does not resolve."""


class StructuralError(PolicyError):
    """The policy structure is inconsistent (cycles, orphan interfaces...)."""


class PolicyParseError(PolicyError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = f" at line {line}, column {column}" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    location: str
    message: str

    @property
    def is_error(self) -> bool:
        return self.severity == "error"

    def __str__(self) -> str:
        return f"{self.severity}: {self.location}: {self.message}"


def error(location: str, message: str) -> Diagnostic:
    return Diagnostic("error", location, message)


def warning(location: str, message: str) -> Diagnostic:
    return Diagnostic("warning", location, message)


def has_errors(diagnostics) -> bool:
    return any(d.is_error for d in diagnostics)
