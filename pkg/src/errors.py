#!/usr/bin/env python3

"""Exception hierarchy shared by every module.

Parameter problems are ``ValueError`` subclasses and failed computations are
``RuntimeError`` subclasses, so callers that only know the builtin types still
catch the right thing.
"""

from typing import Optional


class QuantumChainError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(QuantumChainError, ValueError):
    """A run or object was configured inconsistently."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.key = key
        self.line = line


class DomainError(QuantumChainError, ValueError):
    """A parameter lies outside its mathematical domain."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class SizeError(DomainError):
    """Instance too large for a brute-force routine."""


class ContractViolation(DomainError):
    """Arguments break an ordering contract between them."""


class InvariantError(QuantumChainError, ValueError):
    """A value violates the invariant of the type being constructed."""


class NumericalError(QuantumChainError, RuntimeError):
    """A numerical routine failed."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, residual: float, sweeps: int):
        super().__init__(f"{message} (residual={residual:.3e}, sweeps={sweeps})")
        self.residual = residual
        self.sweeps = sweeps


class FitError(NumericalError):
    """Nonlinear regression did not converge."""


class DegenerateFitError(FitError):
    """Data carries no decay signal to fit."""
