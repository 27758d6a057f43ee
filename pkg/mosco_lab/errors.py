"""mosco-lab error hierarchy and structured error models."""

from __future__ import annotations

from enum import Enum
from typing import Any

from pydantic import BaseModel

from mosco_lab.exit_codes import ExitCode


def _default_exit_code(category: ErrorCategory) -> ExitCode:
    mapping = {
        ErrorCategory.INPUT: ExitCode.CONFIG_ERROR,
        ErrorCategory.INVARIANT: ExitCode.INVARIANT_FAILURE,
        ErrorCategory.IO: ExitCode.IO_ERROR,
        ErrorCategory.INTERNAL: ExitCode.INTERNAL_ERROR,
    }
    return mapping[category]


class ErrorCategory(str, Enum):
    INPUT = "input"
    INVARIANT = "invariant"
    IO = "io"
    INTERNAL = "internal"


class Suggestion(BaseModel):
    action: str
    fix: str
    example: str | None = None


class LabError(Exception):
    """Base error carrying a machine-readable failure record."""

    def __init__(
        self,
        message: str,
        code: str,
        category: ErrorCategory = ErrorCategory.INTERNAL,
        suggestion: Suggestion | None = None,
        details: dict[str, Any] | None = None,
        exit_code: ExitCode | int | None = None,
        field: str | None = None,
    ) -> None:
        super().__init__(message)
        self.message = message
        self.code = code
        self.category = category
        self.suggestion = suggestion
        self.details = details or {}
        self.field = field
        resolved_exit_code = exit_code if exit_code is not None else _default_exit_code(category)
        self.exit_code = int(resolved_exit_code)

    def to_dict(self) -> dict[str, Any]:
        result: dict[str, Any] = {
            "message": self.message,
            "code": self.code,
            "category": self.category.value,
            "suggestion": self.suggestion.model_dump() if self.suggestion else None,
            "details": self.details,
        }
        if self.field is not None:
            result["field"] = self.field
        return result


class InputError(LabError):
    """E1xxx: bad input, parameters or configuration."""

    default_code = "E1000"

    def __init__(
        self,
        message: str,
        code: str | None = None,
        suggestion: Suggestion | None = None,
        details: dict[str, Any] | None = None,
        field: str | None = None,
    ) -> None:
        super().__init__(
            message,
            code or self.default_code,
            category=ErrorCategory.INPUT,
            suggestion=suggestion,
            details=details,
            exit_code=ExitCode.CONFIG_ERROR,
            field=field,
        )


class MalformedInputError(InputError):
    default_code = "E1001"


class PointLookupError(InputError):
    default_code = "E1002"


class ParameterError(InputError):
    default_code = "E1003"


class DomainError(InputError):
    default_code = "E1004"


class ShapeError(InputError):
    default_code = "E1005"


class PreconditionError(InputError):
    default_code = "E1006"


class GeneratorError(InputError):
    default_code = "E1007"


class ConfigError(InputError):
    """Scenario parse or validation failure; ``details`` carries line or key."""

    default_code = "E1010"


class InvariantError(LabError):
    """E3xxx: an asserted mathematical invariant does not hold."""

    default_code = "E3000"

    def __init__(
        self,
        message: str,
        *,
        module: str,
        margin: float | None = None,
        code: str | None = None,
        details: dict[str, Any] | None = None,
    ) -> None:
        merged = {"module": module, "margin": margin}
        merged.update(details or {})
        super().__init__(
            message,
            code or self.default_code,
            category=ErrorCategory.INVARIANT,
            details=merged,
            exit_code=ExitCode.INVARIANT_FAILURE,
        )
        self.module = module
        self.margin = margin


class MetricAxiomError(InvariantError):
    default_code = "E3001"


class MonotonicityError(InvariantError):
    default_code = "E3002"


class ExhaustionError(InvariantError):
    """No level of a finite family reaches the requested bound."""

    default_code = "E3010"

    def __init__(
        self,
        message: str,
        *,
        module: str,
        best_level: int,
        best_gap: float,
        details: dict[str, Any] | None = None,
    ) -> None:
        merged = {"best_level": best_level, "best_gap": best_gap}
        merged.update(details or {})
        super().__init__(message, module=module, margin=None, details=merged)
        self.best_level = best_level
        self.best_gap = best_gap


class ArtifactIOError(LabError):
    """E4xxx: reading or writing artifacts failed."""

    def __init__(
        self,
        message: str,
        code: str = "E4000",
        suggestion: Suggestion | None = None,
        details: dict[str, Any] | None = None,
        field: str | None = None,
    ) -> None:
        super().__init__(
            message,
            code,
            category=ErrorCategory.IO,
            suggestion=suggestion,
            details=details,
            exit_code=ExitCode.IO_ERROR,
            field=field,
        )


class InternalError(LabError):
    """E5xxx: uncaught exceptions."""

    def __init__(
        self,
        message: str,
        code: str = "E5000",
        details: dict[str, Any] | None = None,
    ) -> None:
        super().__init__(
            message,
            code,
            category=ErrorCategory.INTERNAL,
            details=details,
            exit_code=ExitCode.INTERNAL_ERROR,
        )
