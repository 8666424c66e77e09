"""Exceptions raised by the integrators."""
from __future__ import annotations


class SingularMatrixError(ArithmeticError):
    """A pivot fell below the singularity threshold during LU factorisation."""


class NewtonBreakdown(SingularMatrixError):
    """The Schur complement of the Newton system is numerically singular."""


class StepFailure(RuntimeError):
    """Newton iteration did not converge within the iteration budget.

    ``iterates`` holds the sequence of jets visited, for diagnostics.
    """

    def __init__(self, message, residual_norm=float("nan"), iterations=0, iterates=None):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations
        self.iterates = iterates if iterates is not None else []


class SingularAmplification(ArithmeticError):
    """The implicit stability polynomial Q_R(-h*lambda) vanishes."""
