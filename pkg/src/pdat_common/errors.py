from __future__ import annotations

from typing import Any


def typed_error(code: str, message: str, *, details: dict | None = None, **extra: Any) -> dict:
    """
    Standard error envelope:
      {"error": {"code": code, "message": message, "details": {...}}, ...extra}
    """
    err: dict[str, Any] = {"error": {"code": code, "message": message}}
    if details:
        err["error"]["details"] = details
    if extra:
        err.update(extra)
    return err


class PdatError(Exception):
    """Base class for errors that map onto a CLI exit code."""

    code = "internal"
    exit_code = 1

    def __init__(self, message: str, *, details: dict | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.details = dict(details or {})

    def to_envelope(self, **extra: Any) -> dict:
        return typed_error(self.code, self.message, details=self.details or None, **extra)


class ConfigError(PdatError, ValueError):
    code = "config_error"
    exit_code = 2


class DataError(PdatError, ValueError):
    code = "data_error"
    exit_code = 3


class ShapeError(DataError):
    code = "shape_error"


class NumericalAbort(PdatError, RuntimeError):
    code = "numerical_abort"
    exit_code = 4


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, PdatError):
        return exc.exit_code
    return 1
