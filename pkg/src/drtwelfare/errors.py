"""Exception hierarchy shared by the model, solvers and CLI."""

from __future__ import annotations


class DRTError(Exception):
    """Base class for all package errors."""


class DomainError(DRTError, ValueError):
    """An argument lies outside the domain of a model function."""


class UnsupportedElasticityError(DomainError):
    """Gross willingness to pay diverges for elasticity <= 1."""


class ContractError(DRTError, ValueError):
    """Caller violated a structural precondition (shape, unknown id)."""


class ValidationError(DRTError, ValueError):
    """Scenario data failed validation.

    ``field`` names the offending input (for example ``marginals.dQ_dX``);
    ``line``/``column`` are 1-based positions in the source file when known.
    """

    def __init__(self, message: str, field: str | None = None,
                 line: int | None = None, column: int | None = None):
        self.message = message
        self.field = field
        self.line = line
        self.column = column
        super().__init__(str(self))

    def __str__(self) -> str:
        where = ""
        if self.field:
            where += f"{self.field}: "
        if self.line is not None:
            where = f"line {self.line}, column {self.column or 1}: " + where
        return where + self.message


class SingularityError(DomainError):
    """The occupancy bracket vanishes, so the optimal price is undefined."""


class ConvergenceError(DRTError, RuntimeError):
    """Fixed-point iteration exhausted its budget."""

    def __init__(self, message: str, trace: list | None = None):
        self.trace = list(trace or [])
        super().__init__(message)
