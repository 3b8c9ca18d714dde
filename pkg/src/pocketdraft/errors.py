"""Error taxonomy shared across modules.

Input and shape problems raise plain ValueError (or SmilesError, which
subclasses it). The classes here mark numeric failures: non-finite values
appearing mid-computation, and iterative procedures running out of
budget. The CLI maps ValueError family to exit code 2 and these to 3.
"""
from __future__ import annotations

__all__ = ["NumericError", "NonConvergenceError"]


class NumericError(RuntimeError):
    """A computation produced non-finite values or diverged."""


class NonConvergenceError(NumericError):
    """An iterative solver hit its iteration cap; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual
