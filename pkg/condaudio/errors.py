# condaudio/errors.py: one hierarchy for every failure a command can report.
# Each class carries the process exit code the CLI maps it to.
from __future__ import annotations

from typing import Any, Dict, Optional


class CondAudioError(Exception):
    exit_code: int = 2


class ParameterError(CondAudioError, ValueError):
    """Invalid parameter values (ranges, shapes, unknown names)."""

    exit_code = 1


class DataError(CondAudioError):
    """Input data that cannot be read or violates its format."""

    exit_code = 2


class FormatError(DataError):
    ...


class ClipMismatchError(DataError):
    def __init__(self, message: str, missing: Optional[list[str]] = None):
        super().__init__(message)
        self.missing = sorted(missing or [])


class ConfigMismatchError(DataError):
    ...


class MetricError(CondAudioError, ValueError):
    """A metric is undefined for the given input."""

    exit_code = 2


class DivergenceError(CondAudioError, ArithmeticError):
    exit_code = 3

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in sorted(self.diagnostics.items()))
            message = f"{message} ({details})"
        super().__init__(message)
