# src/dmoe/errors.py
"""
Exception hierarchy for dmoe.

Library code raises these; only the CLI turns them into exit codes.
"""

from __future__ import annotations

from typing import Any, List, Optional


class DmoeError(Exception):
    """Base exception for dmoe operations."""


class InvalidArgumentError(DmoeError, ValueError):
    """Raised when an argument violates an operation's precondition."""


class InvalidLayoutError(InvalidArgumentError):
    """Raised when bin endpoints are not strictly increasing inside the range."""


class OutOfRangeError(InvalidArgumentError):
    """Raised when a target lies outside the layout's target range."""


class NumericalError(DmoeError, ArithmeticError):
    """Raised when a numerical routine (e.g. quadrature) fails to converge."""


class DivergenceError(DmoeError):
    """Raised when training produces a non-finite loss.

    The records logged before the failure are kept on ``log``.
    """

    def __init__(self, message: str, log: Optional[List[Any]] = None):
        super().__init__(message)
        self.log = list(log or [])


class RecalibrationError(DmoeError):
    """Raised when a recalibration map cannot be fitted."""


class ParseError(DmoeError):
    """Raised when a results or vector file is malformed."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(DmoeError):
    """Base exception for configuration handling."""


class ConfigNotFoundError(ConfigError):
    """Raised when a config file doesn't exist."""


class ConfigValidationError(ConfigError):
    """Raised when config validation fails."""
