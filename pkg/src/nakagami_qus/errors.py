from datetime import datetime, timezone
from enum import Enum
from typing import Any, Dict, Optional


class ErrorCode(str, Enum):
    DOMAIN_ERROR = "DOMAIN_ERROR"
    DEGENERATE_WINDOW = "DEGENERATE_WINDOW"
    SINGULAR_PIXEL = "SINGULAR_PIXEL"
    CONFIGURATION_ERROR = "CONFIGURATION_ERROR"
    FORMAT_ERROR = "FORMAT_ERROR"
    IO_ERROR = "IO_ERROR"
    TRAINING_DIVERGENCE = "TRAINING_DIVERGENCE"
    EVALUATION_ERROR = "EVALUATION_ERROR"


class NakagamiError(Exception):
    """Base class for every error raised by the toolkit.

    Each subclass fixes an ``ErrorCode`` and the process exit code the CLI reports.
    """

    code: ErrorCode = ErrorCode.DOMAIN_ERROR
    exit_code: int = 1

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}


class DomainError(NakagamiError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""

    code = ErrorCode.DOMAIN_ERROR
    exit_code = 2


class DegenerateWindowError(NakagamiError, ValueError):
    """A window carries no spread (constant or all-zero data)."""

    code = ErrorCode.DEGENERATE_WINDOW


class SingularPixelError(NakagamiError, ValueError):
    """The score-estimator denominator vanishes (r close to sqrt(omega))."""

    code = ErrorCode.SINGULAR_PIXEL


class ConfigurationError(NakagamiError):
    code = ErrorCode.CONFIGURATION_ERROR
    exit_code = 2


class FormatError(NakagamiError):
    code = ErrorCode.FORMAT_ERROR
    exit_code = 2


class ArtifactIOError(NakagamiError):
    code = ErrorCode.IO_ERROR
    exit_code = 3


class TrainingDivergenceError(NakagamiError):
    """Loss became non-finite; ``details`` holds step, delta and the last finite loss."""

    code = ErrorCode.TRAINING_DIVERGENCE
    exit_code = 4


class EvaluationError(NakagamiError):
    code = ErrorCode.EVALUATION_ERROR
    exit_code = 2


def to_error_response(exc: NakagamiError) -> Dict[str, Any]:
    return {
        "error": {
            "code": exc.code.value,
            "message": exc.message,
            "details": exc.details,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
    }
