from typing import Any, List, Optional

from models import ErrorDetail, ErrorEnvelope, ErrorResponse


class HptError(Exception):
    """Base class for every error raised by the transform library."""

    code = "HPT_ERROR"
    exit_code = 2

    def __init__(self, message: str, details: Optional[List[ErrorDetail]] = None):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_response(self) -> ErrorResponse:
        return ErrorResponse(
            error=ErrorEnvelope(code=self.code, message=self.message, details=self.details)
        )


class DomainError(HptError, ValueError):
    code = "DOMAIN_ERROR"


class IndexPairError(HptError, IndexError):
    code = "INDEX_ERROR"


class LengthMismatchError(HptError, ValueError):
    code = "LENGTH_MISMATCH"


class PoleError(HptError, ZeroDivisionError):
    code = "POLE_ERROR"


class InterlacingError(HptError):
    code = "INTERLACING_ERROR"


class NotPositiveDefiniteError(HptError):
    code = "NOT_SPD"

    def __init__(self, message: str, node: Any = None):
        detail = [ErrorDetail(loc=[str(node)], msg=message, type="not_spd")] if node is not None else None
        super().__init__(message, detail)
        self.node = node


class StructureError(HptError):
    code = "STRUCTURE_ERROR"


class BufferInsufficientError(HptError):
    code = "BUFFER_INSUFFICIENT"

    def __init__(self, message: str, target: Any, source: Any, section: int, buffer: int):
        loc = ["target", str(target), "source", str(source), "N", section, "p", buffer]
        super().__init__(
            f"{message} (target={target}, source={source}, N={section}, p={buffer}); "
            f"retry with a larger buffer, e.g. p={max(2 * buffer, 16)}",
            [ErrorDetail(loc=loc, msg=message, type="buffer_insufficient")],
        )
        self.target = target
        self.source = source
        self.section = section
        self.buffer = buffer


class PlanStateError(HptError):
    code = "PLAN_STATE"


class DegreeMismatchError(HptError):
    code = "DEGREE_MISMATCH"
    exit_code = 3


class PlanFormatError(HptError):
    code = "PLAN_FORMAT"


class VerificationFailure(HptError):
    code = "VERIFICATION_FAILED"
    exit_code = 1


class ConfigError(HptError):
    code = "VALIDATION_ERROR"
