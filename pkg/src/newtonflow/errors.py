"""Exception hierarchy shared by the solvers and the sampling harness."""

from __future__ import annotations


class NewtonFlowError(Exception):
    """Base class for all package errors."""


class NonFiniteError(NewtonFlowError, ArithmeticError):
    """An evaluator produced NaN or Inf (e.g. overflow in ``exp``)."""


class SingularMatrixError(NewtonFlowError, ArithmeticError):
    """A pivot fell below the singularity threshold during LU factorization."""


class ZeroDirectionError(NewtonFlowError, ArithmeticError):
    """Projection onto a (numerically) zero vector was requested."""


class MissingOracleError(NewtonFlowError, ValueError):
    """The correct-attractor criterion was requested without oracle labels."""


class StepUnderflowError(NewtonFlowError):
    """The step size fell below the lower bound before a step was accepted.

    ``cause`` is the exception raised at the last trial point when the final
    rejection came from a failed field evaluation, else ``None``.
    """

    def __init__(self, message: str, cause: Exception | None = None, evaluations: int = 0) -> None:
        super().__init__(message)
        self.cause = cause
        self.evaluations = evaluations
