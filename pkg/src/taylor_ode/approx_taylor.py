"""Approximate explicit (AET) and implicit (AIT) Taylor methods for u' = f(u).

Derivatives of f(u(t)) are replaced by centered finite differences of f
evaluated on Taylor polynomials, so only f (and f' for the implicit Newton
solve) is ever needed.

Right-hand sides must be vectorised over leading axes: ``f`` maps an array of
shape (..., M) to (..., M) and ``jac`` maps (..., M) to (..., M, M).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from math import factorial
from typing import Callable, Optional

import numpy as np

from .block_newton import BlockJacobian, NewtonStats, OpCounter, schur_factor, schur_solve
from .errors import NewtonBreakdown, StepFailure
from .stencil import stencil_for

__all__ = [
    "OdeProblem",
    "TaylorJet",
    "NewtonConfig",
    "aet_derivatives",
    "aet_step",
    "ait_residual",
    "ait_jacobian_blocks",
    "ait_initial_jet",
    "ait_step",
    "AITSolver",
    "cost_model",
]


@dataclass
class OdeProblem:
    """Autonomous system u' = f(u) on [t0, T]."""

    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    u0: np.ndarray
    t0: float = 0.0
    T: float = 1.0
    exact: Optional[Callable[[float], np.ndarray]] = None
    name: str = "problem"
    validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.u0 = np.atleast_1d(np.asarray(self.u0, dtype=np.float64))
        if self.validate:
            self.check_jacobian()

    @property
    def dim(self) -> int:
        return self.u0.shape[0]

    def check_jacobian(self, at=None, rtol: float = 1e-5):
        """Compare ``jac`` with central differences of ``f``; raise ValueError on mismatch."""
        u = self.u0 if at is None else np.asarray(at, dtype=np.float64)
        J = np.asarray(self.jac(u), dtype=np.float64)
        if J.shape != (self.dim, self.dim):
            raise ValueError(f"{self.name}: jac returned shape {J.shape}, expected {(self.dim, self.dim)}")
        fd = np.empty_like(J)
        for i in range(self.dim):
            step = 1e-6 * max(1.0, abs(u[i]))
            e = np.zeros(self.dim)
            e[i] = step
            fd[:, i] = (self.f(u + e) - self.f(u - e)) / (2 * step)
        scale = max(1.0, np.max(np.abs(J)))
        if np.max(np.abs(J - fd)) > rtol * scale:
            raise ValueError(f"{self.name}: Jacobian disagrees with finite differences of f")


@dataclass
class TaylorJet:
    """Stacked AIT unknowns, shape (R+1, M): z[0] ~ u_{n+1}, z[k] ~ (-h)^(k-1) v^(k)."""

    z: np.ndarray

    @property
    def order(self) -> int:
        return self.z.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.z.shape[1]


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping rule for Newton: ||F||_inf <= tol * (1 + ||u_n||_inf).

    ``tol=None`` means 1e-13 in double precision, scaled by the machine
    epsilon ratio for other dtypes.  The iteration also stops once the
    correction is at round-off level relative to the jet.
    """

    tol: Optional[float] = None
    max_iter: int = 50
    diverge_after: int = 4

    def tolerance(self, dtype) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-13 * float(np.finfo(dtype).eps / np.finfo(np.float64).eps)


def _taylor_weights(R: int, dtype=np.float64) -> np.ndarray:
    return _taylor_weights_cached(R, np.dtype(dtype))


@lru_cache(maxsize=None)
def _taylor_weights_cached(R: int, dt: np.dtype) -> np.ndarray:
    one = dt.type(1)
    w = np.array([one / factorial(k) for k in range(R + 1)], dtype=dt)
    w.setflags(write=False)
    return w


def aet_derivatives(problem: OdeProblem, R: int, h: float, u_n) -> np.ndarray:
    """Approximants v^(0..R) of the first R time derivatives at u_n, shape (R+1, M).

    v^(k+1) = h^-k sum_j beta_j f( sum_{l<=k} (j h)^l / l! v^(l) ).
    """
    if R < 1:
        raise ValueError(f"order must be >= 1, got {R}")
    u_n = np.asarray(u_n)
    v = np.empty((R + 1,) + u_n.shape, dtype=np.result_type(u_n.dtype, np.float64))
    v[0] = u_n
    v[1] = problem.f(u_n)
    if R == 1:
        return v
    if h == 0:
        raise ValueError("finite-difference derivatives need h != 0")
    dt = v.dtype
    hh = dt.type(h)
    hpow = hh ** np.arange(R, dtype=dt)
    for k in range(1, R):
        beta, powers = _aet_coeffs(k, R, dt)
        args = (powers * hpow[: k + 1]) @ v[: k + 1]
        v[k + 1] = (beta @ problem.f(args)) / hpow[k]
    return v


@lru_cache(maxsize=None)
def _aet_coeffs(k: int, R: int, dt: np.dtype):
    """Stencil weights and the matrix j^l / l! (l <= k) for derivative k of order R."""
    st = stencil_for(k, R)
    # j^l and l! are exact integers, so one rounding per entry
    powers = np.array([[dt.type(int(j) ** l) / dt.type(factorial(l)) for l in range(k + 1)]
                       for j in st.offsets], dtype=dt)
    beta = st.as_dtype(dt)
    for a in (beta, powers):
        a.setflags(write=False)
    return beta, powers


def aet_step(problem: OdeProblem, R: int, h: float, u_n) -> np.ndarray:
    """One approximate explicit Taylor step: u_{n+1} = sum_k h^k / k! v^(k)."""
    u_n = np.asarray(u_n)
    if h == 0:
        return u_n.copy()
    v = aet_derivatives(problem, R, h, u_n)
    dt = v.dtype
    coeffs = np.array([dt.type(h) ** k / factorial(k) for k in range(R + 1)], dtype=dt)
    return u_n + coeffs[1:] @ v[1:]


@dataclass(frozen=True)
class _Plan:
    """Evaluation points of all residual rows k = 1..R in one batch.

    Point p belongs to row ``row[p]`` and has argument
    z_0 - h * sum_l C[p, l-1] z_l; row k of the residual is sum_p W[k-1, p] f(arg_p) - z_k.
    """

    C: np.ndarray
    W: np.ndarray
    WC: np.ndarray


@lru_cache(maxsize=None)
def _plan(R: int, dt: np.dtype) -> _Plan:
    rows_C, cols_W = [], []
    # row 1: f(z_0) itself, no stencil
    rows_C.append([Fraction(0)] * R)
    cols_W.append((0, dt.type(1)))
    for k in range(2, R + 1):
        st = stencil_for(k - 1, R)
        beta = st.as_dtype(dt)
        for j, b in zip(st.offsets, beta):
            if st.exact[j + st.half_width] == 0:
                continue
            rows_C.append([Fraction(int(j)) ** l / factorial(l) if l < k else Fraction(0)
                           for l in range(1, R + 1)])
            cols_W.append((k - 1, b))
    P = len(rows_C)
    C = np.zeros((P, R), dtype=dt)
    W = np.zeros((R, P), dtype=dt)
    for p, (row, (k, b)) in enumerate(zip(rows_C, cols_W)):
        for l, c in enumerate(row):
            C[p, l] = dt.type(c.numerator) / dt.type(c.denominator)
        W[k, p] = b
    WC = W[:, :, None] * C[None, :, :]
    for a in (C, W, WC):
        a.setflags(write=False)
    return _Plan(C, W, WC)


def _plan_for(R: int, dtype) -> _Plan:
    return _plan(R, np.dtype(dtype))


class _StepConstants:
    """Everything in the AIT system that depends only on (R, h, M, dtype)."""

    def __init__(self, R, h, M, dt):
        plan = _plan_for(R, dt)
        hh = dt.type(h)
        self.h = hh
        self.W = plan.W
        self.hC = hh * plan.C
        self.htw = hh * _taylor_weights(R, dt)[1:]
        # rows (k, l) flattened so one matmul against the stacked f' gives all blocks
        self.hWC = (-hh * plan.WC).transpose(0, 2, 1).reshape(R * R, -1)
        eye = np.eye(M, dtype=dt)
        blocks = np.zeros((R + 1, R + 1, M, M), dtype=dt)
        blocks[0, 0] = eye
        blocks[0, 1:] = -self.htw[:, None, None] * eye
        idx = np.arange(1, R + 1)
        blocks[idx, idx] = -eye
        self.template = blocks
        # z = shift @ v moves explicit derivatives at t_n to the scaled jet at t_n + h
        shift = np.zeros((R + 1, R + 1), dtype=dt)
        for k in range(R + 1):
            scale = (-hh) ** (k - 1) if k else dt.type(1)
            for j in range(k, R + 1):
                shift[k, j] = scale * hh ** (j - k) / factorial(j - k)
        self.shift = shift


def _ait_eval(problem, R, h, u_n, d, zt, want_jac, const=None):
    """Residual (and Jacobian blocks) of the AIT system in increment form.

    The jet is (u_n + d, zt[0], ..., zt[R-1]); the F_0 row is written as
    d - h sum z_k/k!, so u_n cancels exactly.
    """
    if const is None:
        const = _StepConstants(R, h, u_n.shape[0], zt.dtype)
    args = u_n + (d - const.hC @ zt)
    F = _ait_rows(problem, const, d, zt, args)
    return F, (_ait_blocks(problem, const, args) if want_jac else None)


def _ait_rows(problem, const, d, zt, args):
    F = np.empty((zt.shape[0] + 1, zt.shape[1]), dtype=zt.dtype)
    F[0] = d - const.htw @ zt
    F[1:] = const.W @ problem.f(args) - zt
    return F


def _ait_blocks(problem, const, args):
    R, P = const.W.shape
    M = args.shape[1]
    Jp = np.asarray(problem.jac(args), dtype=const.template.dtype).reshape(P, M * M)
    blocks = const.template.copy()
    blocks[1:, 0] = (const.W @ Jp).reshape(R, M, M)
    # hWC vanishes on and above the block diagonal, so the -I diagonal survives
    blocks[1:, 1:] += (const.hWC @ Jp).reshape(R, R, M, M)
    return BlockJacobian(blocks)


def _as_jet(z, R):
    z = np.asarray(z)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != R + 1:
        raise ValueError(f"jet must have R+1={R + 1} blocks, got {z.shape[0]}")
    if z.dtype.kind != "f":
        z = z.astype(np.float64)
    return z


def ait_residual(problem: OdeProblem, R: int, h: float, u_n, z) -> np.ndarray:
    """Stacked AIT residual blocks F_0..F_R, shape (R+1, M)."""
    z = _as_jet(z, R)
    u_n = np.asarray(u_n, dtype=z.dtype).reshape(z.shape[1])
    F, _ = _ait_eval(problem, R, h, u_n, z[0] - u_n, z[1:], False)
    return F


def ait_jacobian_blocks(problem: OdeProblem, R: int, h: float, z) -> BlockJacobian:
    """Block Jacobian of ``ait_residual`` with respect to (z_0, ..., z_R)."""
    z = _as_jet(z, R)
    zero = np.zeros_like(z[0])
    _, jac = _ait_eval(problem, R, h, z[0], zero, z[1:], True)
    return jac


def ait_initial_jet(problem: OdeProblem, R: int, h: float, u_n) -> np.ndarray:
    """Warm start z_0 = u_n, z_k = (-h)^(k-1) v^(k) from explicit derivatives with step -h."""
    u_n = np.asarray(u_n)
    if h == 0 or R == 1:
        z = np.zeros((R + 1,) + u_n.shape, dtype=u_n.dtype)
        z[0] = u_n
        z[1] = problem.f(u_n)
        if h == 0 and R > 1:
            # derivatives are undefined at h=0; the rows decouple anyway
            z[2:] = 0
        return z
    v = aet_derivatives(problem, R, -h, u_n)
    scale = np.array([(-h) ** (k - 1) for k in range(1, R + 1)], dtype=v.dtype)
    z = v.copy()
    z[1:] *= scale[:, None]
    return z


class AITSolver:
    """Newton solver for one AIT step, with reusable configuration and counters.

    Not safe for concurrent use; create one instance per worker.
    """

    def __init__(self, problem: OdeProblem, R: int, newton: NewtonConfig | None = None,
                 counter: OpCounter | None = None):
        if R < 1:
            raise ValueError(f"order must be >= 1, got {R}")
        self.problem = problem
        self.R = R
        self.newton = newton or NewtonConfig()
        self.counter = counter
        self._const_key = None
        self._const = None

    def solve(self, h: float, u_n, z_init=None) -> tuple[np.ndarray, np.ndarray, NewtonStats]:
        """Return (increment d = u_{n+1} - u_n, converged jet, stats).

        ``z[0]`` carries the low-order part of the increment as well, so it
        keeps full relative precision even when u_{n+1} is much smaller than
        u_n.
        """
        d, _, z, stats = self.solve_split(h, u_n, z_init)
        return d, z, stats

    def solve_split(self, h: float, u_n, z_init=None):
        """Like ``solve`` but returns (d, d_lo, z, stats) with d + d_lo the increment to
        about twice working precision."""
        R = self.R
        u_n = np.asarray(u_n)
        if z_init is not None:
            z = np.array(z_init, copy=True)
            return self._newton(h, u_n.astype(z.dtype), z, self._constants(h, z.dtype, u_n.shape[0]))
        if h == 0 or R == 1:
            z = ait_initial_jet(self.problem, R, h, u_n)
            return self._newton(h, u_n.astype(z.dtype), z, self._constants(h, z.dtype, u_n.shape[0]))
        v = aet_derivatives(self.problem, R, -h, u_n)
        dt = v.dtype
        const = self._constants(h, dt, u_n.shape[0])
        u_n = u_n.astype(dt)
        if _nonstiff(v, h):
            # Taylor-shifted predictor: usually one Newton iteration instead of two
            try:
                return self._newton(h, u_n, const.shift @ v, const)
            except StepFailure:
                pass
        plain = v.copy()
        plain[1:] *= const.shift[1:, 1:].diagonal()[:, None]
        return self._newton(h, u_n, plain, const)

    def _constants(self, h, dt, M) -> _StepConstants:
        key = (h, dt, M)
        if self._const_key != key:
            self._const = _StepConstants(self.R, h, M, dt)
            self._const_key = key
        return self._const

    def _newton(self, h, u_n, z, const):
        cfg = self.newton
        dt = z.dtype
        tol = cfg.tolerance(dt) * (1 + float(np.abs(u_n).max()))
        eps = float(np.finfo(dt).eps)
        d = z[0] - u_n
        lo = np.zeros_like(d)
        zt = z[1:]
        stats = NewtonStats()
        growth = 0
        last = np.inf
        iterates = []
        jac = factor = None
        with np.errstate(over="ignore", invalid="ignore"):
            while True:
                args = u_n + (d - const.hC @ zt)
                F = _ait_rows(self.problem, const, d, zt, args)
                res = float(np.abs(F).max())
                stats.final_residual = res
                if not np.isfinite(res):
                    raise StepFailure("non-finite AIT residual", res, stats.iterations,
                                      _stack(u_n, iterates))
                if res <= tol:
                    stats.converged = True
                    if factor is not None and np.any(np.abs(d) > np.abs(u_n + d)):
                        # the new state is smaller than the increment, so the last bit of d
                        # matters; one chord step with the last factorisation recovers it
                        corr = schur_solve(jac, factor, F)
                        d, lo = _two_sum(d, corr[0])
                        zt = zt + corr[1:]
                    break
                growth = growth + 1 if res > last else 0
                last = res
                if growth >= cfg.diverge_after or stats.iterations >= cfg.max_iter:
                    raise StepFailure(f"Newton failed after {stats.iterations} iterations "
                                      f"(residual {res:.3e})", res, stats.iterations,
                                      _stack(u_n, iterates))
                jac = _ait_blocks(self.problem, const, args)
                try:
                    factor = schur_factor(jac, self.counter)
                except NewtonBreakdown as exc:
                    raise StepFailure(str(exc), res, stats.iterations, _stack(u_n, iterates)) from exc
                delta = schur_solve(jac, factor, F)
                d, lo = _two_sum(d, delta[0])
                zt = zt + delta[1:]
                stats.iterations += 1
                iterates.append((d, zt))
                size = max(float(np.abs(u_n + d).max()), float(np.abs(zt).max()) * abs(h))
                if float(np.abs(delta[0]).max()) <= 4 * eps * (1 + size) and \
                        float(np.abs(delta[1:]).max()) * abs(h) <= 4 * eps * (1 + size):
                    stats.converged = True
                    break
        z = np.concatenate([((u_n + d) + lo)[None], zt])
        return d, lo, z, stats


def _nonstiff(v, h) -> bool:
    """True when successive derivative norms grow by less than 1/(2|h|) per order."""
    norms = np.abs(v[1:]).max(axis=1)
    lead, nxt = norms[:-1], norms[1:]
    ok = lead > 0
    return bool(np.all(abs(h) * nxt[ok] <= 0.5 * lead[ok])) and bool(np.all(nxt[~ok] == 0))


def _two_sum(a, b):
    """s = fl(a + b) and the exact rounding error e, so that a + b = s + e."""
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _stack(u_n, iterates):
    return [np.concatenate([(u_n + d)[None], zt]) for d, zt in iterates]


def ait_step(problem: OdeProblem, R: int, h: float, u_n,
             newton: NewtonConfig | None = None) -> tuple[np.ndarray, NewtonStats]:
    """One AIT step: solve u_n = T~_R(u_{n+1}, -h) for u_{n+1}."""
    d, z, stats = AITSolver(problem, R, newton).solve(h, u_n)
    return z[0], stats


def cost_model(R: int, M: int, beta: float) -> float:
    """Scalar operations per AIT Newton iteration: ((R^2+R)/2 + 2/3) M^3 + R^2 beta M^2."""
    if R < 1 or M < 1:
        raise ValueError("R and M must be >= 1")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return ((R * R + R) / 2 + 2 / 3) * M ** 3 + R * R * beta * M ** 2
