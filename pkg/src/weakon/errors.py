"""Exception hierarchy shared by all weakon modules."""

from __future__ import annotations


class WeakonError(Exception):
    """Base class for every error raised by this package."""


class DSLError(WeakonError, ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        if line is not None:
            message = f"{message} (line {line}, column {col})"
        super().__init__(message)


class DSLSyntaxError(DSLError):
    pass


class UndeclaredVariableError(DSLError):
    pass


class EvaluationError(WeakonError, ArithmeticError):
    """Non-finite value or derivative produced while evaluating a field."""

    def __init__(self, message: str, component: int | None = None):
        self.component = component
        if component is not None:
            message = f"component {component}: {message}"
        super().__init__(message)


class ConvergenceError(WeakonError):
    pass


class MetricError(WeakonError):
    pass


class CombineError(WeakonError, ValueError):
    pass


class CertificationError(WeakonError):
    pass


class IntegrationError(WeakonError):
    pass


class ConfigError(WeakonError):
    pass
