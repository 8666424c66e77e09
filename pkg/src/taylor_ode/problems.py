"""Catalog of benchmark problems and a registry for user-defined ones.

The four built-in examples are

* ``example1``: u' = -5u + 5 sin 2t + 2 cos 2t, u(0) = 0, exact sin 2t, T = 5;
* ``example2``: u' = log((u + u^3 + u^5) / (1 + u^2 + u^4 + u^6)), u(0) = 1, T = 1;
* ``example3``: the Kaps problem, exact (e^-2t, e^-t), T = 5;
* ``example4``: a stiff 3x3 linear system with eigenvalues -2, -40 +- 40i, T = 5.

Example 1 is non-autonomous; for the approximate methods it is integrated in
the autonomous form (u, t)' = (f(u, t), 1), with errors measured on u only.
"""
from __future__ import annotations

import hashlib
import inspect
import json
import logging
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .approx_taylor import OdeProblem
from .exact_taylor import LinearScalarProblem

__all__ = [
    "ProblemSpec",
    "example1",
    "example2",
    "example3",
    "example4",
    "log_poly_derivs",
    "check_f_derivs",
    "reference_solution",
    "register",
    "get",
    "names",
]

log = logging.getLogger(__name__)


@dataclass
class ProblemSpec:
    name: str
    problem: OdeProblem
    f_derivs: Optional[Callable] = None
    linear: Optional[LinearScalarProblem] = None
    reference_T: float = 1.0
    notes: str = ""
    observed: tuple[int, ...] = ()
    reference: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.observed:
            self.observed = tuple(range(self.problem.dim))

    def target(self, dtype=np.float64, T: float | None = None) -> np.ndarray:
        """Exact or reference state at the final time, restricted to observed components."""
        dt = np.dtype(dtype)
        T = self.reference_T if T is None else T
        if self.problem.exact is not None:
            return np.asarray(self.problem.exact(dt.type(T)), dtype=dt)[list(self.observed)]
        if self.reference is not None:
            return np.asarray(self.reference(dt, T), dtype=dt)[list(self.observed)]
        raise ValueError(f"{self.name} has no exact or reference solution")


# -- example 1 ---------------------------------------------------------------

def _ex1_g_deriv(j: int, t):
    # g = 5 sin 2t + 2 cos 2t; derivatives cycle through (sin, cos, -sin, -cos)
    s, c = np.sin(2 * t), np.cos(2 * t)
    cycle = [(s, c), (c, -s), (-s, -c), (-c, s)]
    a, b = cycle[j % 4]
    return 2 ** j * (5 * a + 2 * b)


def _ex1_f(u):
    out = np.ones_like(u)
    t2 = 2 * u[..., 1]
    out[..., 0] = -5 * u[..., 0] + 5 * np.sin(t2) + 2 * np.cos(t2)
    return out


def _ex1_jac(u):
    t = u[..., 1]
    J = np.zeros(u.shape + (2,), dtype=u.dtype)
    J[..., 0, 0] = -5
    J[..., 0, 1] = 10 * np.cos(2 * t) - 4 * np.sin(2 * t)
    return J


def _ex1_exact(t):
    return np.array([np.sin(2 * t), t])


def example1(T: float = 5.0) -> ProblemSpec:
    linear = LinearScalarProblem(-5, _ex1_g_deriv, 0.0, 0.0, T, exact=lambda t: np.sin(2 * t))
    problem = OdeProblem(_ex1_f, _ex1_jac, [0.0, 0.0], 0.0, T, _ex1_exact, "example1")
    return ProblemSpec("example1", problem, linear=linear, reference_T=T,
                       notes="forced linear scalar, autonomised as (u, t)", observed=(0,))


# -- example 2 ---------------------------------------------------------------

_EX2_NUM = (0, 1, 0, 1, 0, 1)          # u + u^3 + u^5, ascending powers
_EX2_DEN = (1, 0, 1, 0, 1, 0, 1)       # 1 + u^2 + u^4 + u^6


def _poly_derivs(coeffs, u, n):
    """[p(u), p'(u), ..., p^(n)(u)] for a polynomial with ascending integer coefficients."""
    out = []
    c = list(coeffs)
    for _ in range(n + 1):
        acc = 0 * u
        for a in reversed(c):
            acc = acc * u + a
        out.append(acc)
        c = [k * a for k, a in enumerate(c)][1:] or [0]
    return out


def log_poly_derivs(coeffs, u, n):
    """Derivatives 1..n of log p(u) via w = p'/p and p w^(m) = p^(m+1) - sum_k C(m,k) p^(k) w^(m-k)."""
    p = _poly_derivs(coeffs, u, n)
    w = []
    for m in range(n):
        acc = p[m + 1]
        for k in range(1, m + 1):
            acc = acc - comb(m, k) * p[k] * w[m - k]
        w.append(acc / p[0])
    return w


def _ex2_f(u):
    u2 = u * u
    return np.log(u * (1 + u2 * (1 + u2)) / (1 + u2 * (1 + u2 * (1 + u2))))


def _ex2_jac(u):
    u2 = u * u
    num = (1 + u2 * (3 + 5 * u2)) / (u * (1 + u2 * (1 + u2)))
    den = u * (2 + u2 * (4 + 6 * u2)) / (1 + u2 * (1 + u2 * (1 + u2)))
    return (num - den)[..., None]


def ex2_f_derivs(u, n):
    """[f(u), f'(u), ..., f^(n)(u)] for the example 2 right-hand side."""
    vals = [_ex2_f(u)]
    if n:
        wp = log_poly_derivs(_EX2_NUM, u, n)
        wq = log_poly_derivs(_EX2_DEN, u, n)
        vals.extend(a - b for a, b in zip(wp, wq))
    return vals


def check_f_derivs(f_derivs, points, order: int, rtol: float = 1e-6) -> None:
    """Check each derivative in the chain against central differences of the one below.

    Raises ValueError on the first mismatch larger than ``rtol`` (relative,
    floored at 1).
    """
    for u in points:
        u = float(u)
        step = 1e-5 * max(1.0, abs(u))
        vals = f_derivs(u, order)
        up = f_derivs(u + step, order - 1)
        down = f_derivs(u - step, order - 1)
        for m in range(1, order + 1):
            fd = (up[m - 1] - down[m - 1]) / (2 * step)
            if abs(fd - vals[m]) > rtol * max(1.0, abs(vals[m])):
                raise ValueError(f"derivative {m} at u={u}: chain gives {vals[m]!r}, "
                                 f"finite differences give {fd!r}")


_REFERENCE_CACHE: dict = {}
REFERENCE_ORDER = 6
REFERENCE_STEPS = 20000


def reference_solution(spec_name: str, problem: OdeProblem, dtype, T: float,
                       order: int = REFERENCE_ORDER, steps: int = REFERENCE_STEPS,
                       cache_dir: str | Path | None = None) -> np.ndarray:
    """Fine AIT solution at T, memoised in-process and optionally on disk."""
    from .bench import integrate_problem

    dt = np.dtype(dtype)
    key = {"problem": spec_name, "dtype": dt.name, "T": repr(float(T)), "order": order, "steps": steps}
    digest = hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]
    if digest in _REFERENCE_CACHE:
        return _REFERENCE_CACHE[digest].copy()
    path = Path(cache_dir) / f"reference-{digest}.json" if cache_dir else None
    if path is not None and path.exists():
        data = json.loads(path.read_text())
        if data.get("key") == key:
            value = np.array([dt.type(s) for s in data["value"]], dtype=dt)
            _REFERENCE_CACHE[digest] = value
            return value.copy()
    log.info("computing %s reference: AIT R=%d, N=%d, %s", spec_name, order, steps, dt.name)
    value, _ = integrate_problem(problem, "ait", order, steps, T=T, dtype=dt)
    _REFERENCE_CACHE[digest] = value
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        text = [np.format_float_scientific(x, unique=True) for x in value]
        path.write_text(json.dumps({"key": key, "value": text}, indent=1))
    return value.copy()


def example2(T: float = 1.0, cache_dir: str | Path | None = None) -> ProblemSpec:
    check_f_derivs(ex2_f_derivs, (0.6, 0.8, 1.0, 1.3, 1.7), 6)
    problem = OdeProblem(_ex2_f, _ex2_jac, [1.0], 0.0, T, None, "example2")
    spec = ProblemSpec("example2", problem, f_derivs=ex2_f_derivs, reference_T=T,
                       notes=f"reference: AIT R={REFERENCE_ORDER}, N={REFERENCE_STEPS}")
    spec.reference = lambda dt, T_: reference_solution("example2", problem, dt, T_, cache_dir=cache_dir)
    return spec


# -- example 3 ---------------------------------------------------------------

def _kaps_f(u):
    y, z = u[..., 0], u[..., 1]
    return np.stack([-1002 * y + 1000 * z * z, y - z * (1 + z)], axis=-1)


def _kaps_jac(u):
    z = u[..., 1]
    J = np.empty(u.shape + (2,), dtype=u.dtype)
    J[..., 0, 0] = -1002
    J[..., 0, 1] = 2000 * z
    J[..., 1, 0] = 1
    J[..., 1, 1] = -1 - 2 * z
    return J


def _kaps_exact(t):
    return np.array([np.exp(-2 * t), np.exp(-t)])


def example3(T: float = 5.0) -> ProblemSpec:
    problem = OdeProblem(_kaps_f, _kaps_jac, [1.0, 1.0], 0.0, T, _kaps_exact, "example3")
    return ProblemSpec("example3", problem, reference_T=T, notes="Kaps problem, stiffness 1000")


# -- example 4 ---------------------------------------------------------------

EX4_MATRIX = np.array([[-21, 19, -20], [19, -21, 20], [40, -40, -40]])


def _ex4_f(u):
    return u @ EX4_MATRIX.T


def _ex4_jac(u):
    return np.broadcast_to(EX4_MATRIX.astype(u.dtype), u.shape + (3,)).copy()


def _ex4_exact(t):
    e2, e40 = np.exp(-2 * t), np.exp(-40 * t)
    c, s = np.cos(40 * t), np.sin(40 * t)
    return np.array([(e2 + e40 * (c + s)) / 2, (e2 - e40 * (c + s)) / 2, -e40 * (c - s)])


def example4(T: float = 5.0) -> ProblemSpec:
    problem = OdeProblem(_ex4_f, _ex4_jac, [1.0, 0.0, -1.0], 0.0, T, _ex4_exact, "example4")
    return ProblemSpec("example4", problem, reference_T=T, notes="stiff linear system")


# -- registry ----------------------------------------------------------------

_REGISTRY: dict[str, Callable[..., ProblemSpec]] = {
    "example1": example1,
    "example2": example2,
    "example3": example3,
    "example4": example4,
}


def register(name: str, factory: Callable[..., ProblemSpec]) -> None:
    """Make a problem addressable by name.  ``factory(T=None)`` must return a ProblemSpec."""
    if name in _REGISTRY:
        raise ValueError(f"problem {name!r} already registered")
    _REGISTRY[name] = factory


def names() -> list[str]:
    return sorted(_REGISTRY)


def get(name: str, T: float | None = None, **kwargs) -> ProblemSpec:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(names())}") from None
    if T is not None:
        kwargs["T"] = T
    params = inspect.signature(factory).parameters
    if not any(p.kind is p.VAR_KEYWORD for p in params.values()):
        kwargs = {k: v for k, v in kwargs.items() if k in params and (v is not None or k == "T")}
    return factory(**kwargs)
