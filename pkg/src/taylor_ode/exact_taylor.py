"""Exact Taylor steppers.

Two families live here:

* closed forms for the forced linear scalar equation u' = lam*u + g(t),
  built on the truncated exponential Q_j(x) = sum_{k<=j} x^k / k!;
* the exact implicit Taylor (IT) method for scalar autonomous u' = f(u),
  solved by Newton on the jet (z_0, ..., z_R) with rows generated by
  Faa di Bruno sums.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Callable, Optional

import numpy as np

from .approx_taylor import NewtonConfig
from .block_newton import NewtonStats, lu_solve
from .errors import SingularAmplification, SingularMatrixError, StepFailure
from .fdb import DerivChain, fdb_sum, fdb_sum_partials

__all__ = [
    "LinearScalarProblem",
    "q_eval",
    "linear_it_step",
    "linear_et_step",
    "scalar_it_residual",
    "scalar_it_jacobian",
    "scalar_it_initial_jet",
    "scalar_it_step",
    "ScalarITSolver",
]


@dataclass
class LinearScalarProblem:
    """u' = lam * u + g(t) with ``g_deriv(j, t)`` giving the j-th derivative of g."""

    lam: complex
    g_deriv: Callable[[int, float], float]
    u0: float
    t0: float = 0.0
    T: float = 1.0
    exact: Optional[Callable[[float], float]] = None

    @classmethod
    def homogeneous(cls, lam, u0=1.0, t0=0.0, T=1.0):
        return cls(lam, lambda j, t: 0.0, u0, t0, T)


def q_eval(j: int, x):
    """Truncated exponential Q_j(x) by Horner's rule; Q_0 = 1."""
    if j < 0:
        raise ValueError(f"degree must be >= 0, got {j}")
    acc = 1
    for k in range(j, 0, -1):
        acc = 1 + x * acc / k
    return acc


def _forcing_sum(problem, R, t, Qr, x):
    total = 0
    lam = problem.lam
    for j in range(R):
        total = total + problem.g_deriv(j, t) / lam ** (j + 1) * (Qr - q_eval(j, x))
    return total


def linear_it_step(problem: LinearScalarProblem, R: int, t_next: float, h: float, u_n):
    """Implicit Taylor step of order R for the forced linear equation.

    u_{n+1} = u_n / Q_R(-h lam) - sum_j g^(j)(t_{n+1}) / lam^(j+1) (1 - Q_j(-h lam) / Q_R(-h lam))
    """
    x = -h * problem.lam
    Qr = q_eval(R, x)
    if abs(Qr) < 1e-14:
        raise SingularAmplification(f"|Q_{R}({x})| = {abs(Qr):.3e}")
    if problem.lam == 0:
        raise ValueError("the forced closed form needs lam != 0")
    return (u_n - _forcing_sum(problem, R, t_next, Qr, x)) / Qr


def linear_et_step(problem: LinearScalarProblem, R: int, t_n: float, h: float, u_n):
    """Explicit Taylor step: Q_R(h lam) u_n + sum_j g^(j)(t_n) / lam^(j+1) (Q_R - Q_j)(h lam)."""
    x = h * problem.lam
    Qr = q_eval(R, x)
    if problem.lam == 0:
        raise ValueError("the forced closed form needs lam != 0")
    return Qr * u_n + _forcing_sum(problem, R, t_n, Qr, x)


def _jet_array(z, R):
    z = np.asarray(z)
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    if z.shape != (R + 1,):
        raise ValueError(f"scalar jet must have shape ({R + 1},), got {z.shape}")
    return z


def _it_rows(f_derivs, R, h, u_n, d, zt, want_jac):
    # Jet is (u_n + d, zt...).  Row 0 in increment form: d + sum_k (-h)^k z_k / k!.
    dt = zt.dtype
    z0 = u_n + d
    derivs = np.asarray(f_derivs(z0, R if want_jac else R - 1), dtype=dt)
    jet = np.concatenate([[z0], zt])
    coeff = np.array([dt.type(-h) ** k / factorial(k) for k in range(R + 1)], dtype=dt)
    F = np.empty(R + 1, dtype=dt)
    F[0] = d + coeff[1:] @ zt
    F[1] = derivs[0] - zt[0]
    for r in range(1, R):
        F[r + 1] = fdb_sum(r, derivs, jet) - zt[r]
    if not want_jac:
        return F, None
    J = np.zeros((R + 1, R + 1), dtype=dt)
    J[0] = coeff
    J[1, 0] = derivs[1]
    J[1, 1] = -1
    for r in range(1, R):
        J[r + 1, : r + 1] = fdb_sum_partials(r, derivs, jet)
        J[r + 1, r + 1] = -1
    return F, J


def scalar_it_residual(f_derivs: DerivChain, R: int, h: float, u_n, z) -> np.ndarray:
    """Residual of the exact IT jet system (length R+1).

    Row 0 is sum_k (-h)^k z_k / k! - u_n, row 1 is f(z_0) - z_1 and row r+1
    is the r-th Faa di Bruno derivative of f(u) minus z_{r+1}.
    """
    z = _jet_array(z, R)
    u_n = z.dtype.type(u_n)
    F, _ = _it_rows(f_derivs, R, h, u_n, z[0] - u_n, z[1:], False)
    return F


def scalar_it_jacobian(f_derivs: DerivChain, R: int, h: float, z) -> np.ndarray:
    """(R+1) x (R+1) Jacobian of ``scalar_it_residual``; needs f derivatives up to order R."""
    z = _jet_array(z, R)
    _, J = _it_rows(f_derivs, R, h, z[0], z.dtype.type(0), z[1:], True)
    return J


def scalar_it_initial_jet(f_derivs: DerivChain, R: int, u_n, dtype=np.float64) -> np.ndarray:
    """Exact derivative jet of the solution through u_n (the explicit Taylor jet)."""
    dt = np.dtype(dtype)
    u_n = dt.type(u_n)
    derivs = np.asarray(f_derivs(u_n, R - 1), dtype=dt)
    z = np.zeros(R + 1, dtype=dt)
    z[0] = u_n
    z[1] = derivs[0]
    for r in range(1, R):
        z[r + 1] = fdb_sum(r, derivs, z[: r + 1])
    return z


class ScalarITSolver:
    """Dense Newton for the exact implicit Taylor step of a scalar problem."""

    def __init__(self, f_derivs: DerivChain, R: int, newton: NewtonConfig | None = None):
        if R < 1:
            raise ValueError(f"order must be >= 1, got {R}")
        self.f_derivs = f_derivs
        self.R = R
        self.newton = newton or NewtonConfig()

    def solve(self, h: float, u_n, dtype=None):
        """Return (increment d = u_{n+1} - u_n, converged jet, stats)."""
        R, cfg = self.R, self.newton
        dt = np.dtype(dtype) if dtype is not None else np.asarray(u_n).dtype
        if dt.kind != "f":
            dt = np.dtype(np.float64)
        u_n = dt.type(u_n)
        z = scalar_it_initial_jet(self.f_derivs, R, u_n, dt)
        d = dt.type(0)
        zt = z[1:]
        tol = cfg.tolerance(dt) * (1 + abs(float(u_n)))
        eps = float(np.finfo(dt).eps)
        stats = NewtonStats()
        growth, last = 0, np.inf
        iterates = []
        with np.errstate(over="ignore", invalid="ignore"):
            while True:
                F, J = _it_rows(self.f_derivs, R, h, u_n, d, zt, True)
                res = float(np.max(np.abs(F)))
                stats.final_residual = res
                if not np.isfinite(res):
                    raise StepFailure("non-finite IT residual", res, stats.iterations, iterates)
                if res <= tol:
                    stats.converged = True
                    break
                growth = growth + 1 if res > last else 0
                last = res
                if growth >= cfg.diverge_after or stats.iterations >= cfg.max_iter:
                    raise StepFailure(f"Newton failed after {stats.iterations} iterations "
                                      f"(residual {res:.3e})", res, stats.iterations, iterates)
                try:
                    delta = lu_solve(J, -F)
                except SingularMatrixError as exc:
                    raise StepFailure(str(exc), res, stats.iterations, iterates) from exc
                d = d + delta[0]
                zt = zt + delta[1:]
                stats.iterations += 1
                iterates.append(np.concatenate([[u_n + d], zt]))
                hk = np.array([abs(h) ** k / factorial(k) for k in range(1, R + 1)])
                size = abs(float(u_n + d))
                if abs(float(delta[0])) <= 4 * eps * (1 + size) and \
                        float(np.max(np.abs(delta[1:].astype(np.float64)) * hk)) <= 4 * eps * (1 + size):
                    stats.converged = True
                    break
        return d, np.concatenate([[u_n + d], zt]), stats


def scalar_it_step(f_derivs: DerivChain, R: int, h: float, u_n,
                   newton: NewtonConfig | None = None):
    """One exact implicit Taylor step; returns (u_{n+1}, NewtonStats)."""
    d, z, stats = ScalarITSolver(f_derivs, R, newton).solve(h, u_n)
    return z[0], stats
