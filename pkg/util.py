from typing import Any, Dict, Iterable, List, Mapping, Sequence

import numpy as np
from pydantic import ValidationError

from errors import ConfigError, HptError
from models import CliConfig, ErrorDetail, ErrorEnvelope, ErrorResponse


def _validation_details(exc: ValidationError) -> List[ErrorDetail]:
    return [
        ErrorDetail(loc=list(err.get("loc", [])), msg=err.get("msg", ""), type=err.get("type", ""))
        for err in exc.errors()
    ]


def _args_to_config(args: Mapping[str, Any]) -> CliConfig:
    """Validate parsed command-line arguments; drops unset options first."""
    payload = {k: v for k, v in args.items() if v is not None}
    geometry = {k: payload.pop(k) for k in ("kind", "alpha", "beta", "gamma") if k in payload}
    if geometry:
        payload["geometry"] = geometry
    try:
        return CliConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError("Command-line validation failed", _validation_details(e)) from None


def error_response(exc: BaseException) -> ErrorResponse:
    if isinstance(exc, HptError):
        return exc.to_response()
    if isinstance(exc, ValidationError):
        return ErrorResponse(error=ErrorEnvelope(code="VALIDATION_ERROR", message="Validation failed", details=_validation_details(exc)))
    if isinstance(exc, OSError):
        return ErrorResponse(error=ErrorEnvelope(code="IO_ERROR", message=str(exc)))
    return ErrorResponse(error=ErrorEnvelope(code="INTERNAL_ERROR", message=str(exc)))


def format_error(response: ErrorResponse) -> str:
    error = response.error
    lines = [f"error.code={error.code}", f"error.message={error.message}"]
    for i, detail in enumerate(error.details or []):
        loc = ".".join(str(part) for part in (detail.loc or []))
        lines.append(f"error.details.{i}={loc}: {detail.msg} ({detail.type})")
    return "\n".join(lines)


def _format_value(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(v) for v in value)
    return str(value)


def format_pairs(pairs: Mapping[str, Any]) -> str:
    """One key=value line per entry, in insertion order."""
    return "\n".join(f"{key}={_format_value(value)}" for key, value in pairs.items())


def format_table(rows: Iterable[Mapping[str, Any]], columns: Sequence[str]) -> str:
    body = [[_format_value(row.get(col, "")) for col in columns] for row in rows]
    widths = [max([len(col)] + [len(r[i]) for r in body]) for i, col in enumerate(columns)]
    lines = ["  ".join(col.rjust(w) for col, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in body)
    return "\n".join(lines)


def relative_error(actual, expected) -> float:
    scale = max(float(np.linalg.norm(expected)), np.finfo(float).tiny)
    return float(np.linalg.norm(np.asarray(actual) - np.asarray(expected)) / scale)


def report(pairs: Dict[str, Any], rows: Iterable[Mapping[str, Any]] = (), columns: Sequence[str] = ()) -> str:
    text = format_pairs(pairs)
    rows = list(rows)
    if rows and columns:
        text += "\n\n" + format_table(rows, columns)
    return text
