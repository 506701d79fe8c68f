"""
sigpricer/errors.py – exception hierarchy shared by the services, CLI and HTTP layer.

The CLI maps ConfigError to exit code 2 and NumericalError to exit code 3.
"""
from __future__ import annotations

from typing import Optional


class SigPricerError(Exception):
    """Base class for every error raised on purpose by sigpricer."""

    def __init__(self, message: str, cause: Optional[BaseException] = None) -> None:
        super().__init__(message)
        if cause is not None:
            self.__cause__ = cause


# ── Configuration ─────────────────────────────────────────────────────────────


class ConfigError(SigPricerError):
    """Invalid, unparsable or inconsistent experiment configuration."""

    def __init__(
        self,
        message: str,
        *,
        line: Optional[int] = None,
        column: Optional[int] = None,
        cause: Optional[BaseException] = None,
    ) -> None:
        super().__init__(message, cause)
        self.line = line
        self.column = column


# ── Numerics ──────────────────────────────────────────────────────────────────


class NumericalError(SigPricerError):
    """A numerical routine could not produce a finite, valid result."""


class LevelMismatchError(NumericalError):
    """Coefficient tensor is deeper than the signature it is paired with."""


class SingularSystemError(NumericalError):
    """Normal equations could not be factorised."""


class NonFiniteLossError(NumericalError):
    """Training loss became NaN or infinite."""


class PathRejectionError(NumericalError):
    """Too many Monte Carlo paths had to be rejected and resampled."""


class PdeSolveError(NumericalError):
    """Crank–Nicolson sweep produced non-finite values."""


class TensorAlgebraError(ValueError):
    """Precondition of a tensor-algebra operation violated."""
