"""Exception hierarchy shared by every stage of the pipeline."""

from __future__ import annotations


class ColdStartError(Exception):
    """Root of all errors raised by coldstart_lab."""

    exit_code = 1


class ConfigError(ColdStartError, ValueError):
    """Invalid configuration key, value or override."""

    exit_code = 1


class DataError(ColdStartError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 2


class EmptySupportError(DataError):
    """A meta-test user has no support interactions (complete cold-start)."""


class MissingArtifactError(DataError):
    """An upstream artifact is absent; the message names the command to run first."""

    def __init__(self, path: str, command: str):
        super().__init__(f"missing artifact {path}: run {command} first")
        self.path = path
        self.command = command


class NumericError(ColdStartError, ArithmeticError):
    """Non-finite loss, gradient or parameter update."""

    exit_code = 3

    def __init__(self, message: str, details: dict[str, float] | None = None):
        if details:
            parts = ", ".join(f"{k}={v:.6g}" for k, v in details.items())
            message = f"{message} ({parts})"
        super().__init__(message)
        self.details = details or {}
