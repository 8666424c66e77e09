"""Convergence harness: fixed-step runs over grids of step counts.

Errors are L1 vector norms of the final state against the exact or reference
solution; the observed order between successive halvings is
o(N) = log2(e(N/2) / e(N)).
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import problems as catalog
from .approx_taylor import AITSolver, NewtonConfig, OdeProblem, _two_sum, aet_derivatives
from .errors import StepFailure
from .exact_taylor import ScalarITSolver, linear_it_step
from .stencil import make_stencil

__all__ = [
    "METHODS",
    "RunConfig",
    "ReportRow",
    "ConvergenceReport",
    "integrate_problem",
    "integrate",
    "run_grid",
    "observed_orders",
    "emit_csv",
    "read_csv",
    "emit_performance_series",
    "compare_methods",
    "MethodComparison",
]

METHODS = ("ait", "aet", "it-scalar", "it-linear")
NORMS = ("final", "max")
CSV_HEADER = ["N", "h", "error", "order", "newton_iters", "seconds"]


@dataclass
class RunConfig:
    problem: str
    method: str
    order: int
    steps: Sequence[int]
    tol: float | None = None
    max_iter: int = 50
    out: str | None = None
    norm: str = "final"
    dtype: str = "float64"
    T: float | None = None
    compensated: bool = True
    cache_dir: str | None = None

    def newton(self) -> NewtonConfig:
        return NewtonConfig(tol=self.tol, max_iter=self.max_iter)

    def validate(self, spec: catalog.ProblemSpec | None = None) -> catalog.ProblemSpec:
        """Check the configuration and return the resolved problem; raises ValueError."""
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.norm not in NORMS:
            raise ValueError(f"unknown norm {self.norm!r}; choose from {', '.join(NORMS)}")
        if int(self.order) != self.order or self.order < 1:
            raise ValueError(f"order must be a positive integer, got {self.order!r}")
        steps = list(self.steps)
        if not steps or any(int(n) != n or n < 1 for n in steps):
            raise ValueError(f"step counts must be positive integers, got {steps!r}")
        np.dtype(self.dtype)
        if spec is None:
            spec = catalog.get(self.problem, T=self.T, cache_dir=self.cache_dir)
        if self.method == "it-scalar" and (spec.problem.dim != 1 or spec.f_derivs is None):
            raise ValueError(f"it-scalar needs a scalar problem with derivatives; {spec.name} has none")
        if self.method == "it-linear" and spec.linear is None:
            raise ValueError(f"it-linear needs a linear scalar view; {spec.name} has none")
        if self.norm == "max" and spec.problem.exact is None:
            raise ValueError(f"max-over-steps norm needs an exact solution; {spec.name} has none")
        return spec


@dataclass
class ReportRow:
    N: int
    h: float
    error: float
    order: float | None = None
    newton_iters: int = 0
    seconds: float = 0.0
    note: str = ""


@dataclass
class ConvergenceReport:
    rows: list[ReportRow] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        m = self.metadata
        return f"{m.get('problem', '?')}-{m.get('method', '?')}-R{m.get('order', '?')}"

    def errors(self) -> dict[int, float]:
        return {r.N: r.error for r in self.rows}


class _Stepper:
    """Increment-returning single-step map for one method on one problem."""

    def __init__(self, method, R, problem: OdeProblem, spec=None, newton=None):
        self.method, self.R, self.problem = method, R, problem
        self.iterations = 0
        if method == "ait":
            self._solver = AITSolver(problem, R, newton)
        elif method == "it-scalar":
            self._solver = ScalarITSolver(spec.f_derivs, R, newton)
        elif method == "it-linear":
            self._linear = spec.linear

    def increment(self, u, t, h):
        """Increment as a (high, low) pair; the low part is None when not tracked."""
        m = self.method
        if m == "ait":
            d, lo, _, stats = self._solver.solve_split(h, u)
            self.iterations += stats.iterations
            return d, lo
        if m == "aet":
            v = aet_derivatives(self.problem, self.R, h, u)
            dt = v.dtype
            coeffs = np.array([dt.type(h) ** k / math.factorial(k) for k in range(1, self.R + 1)], dtype=dt)
            return coeffs @ v[1:], None
        if m == "it-scalar":
            d, _, stats = self._solver.solve(h, u[0], dtype=u.dtype)
            self.iterations += stats.iterations
            return np.array([d], dtype=u.dtype), None
        raise AssertionError(m)


def integrate_problem(problem: OdeProblem, method: str, R: int, N: int, *, T: float | None = None,
                      dtype=np.float64, newton: NewtonConfig | None = None, spec=None,
                      compensated: bool = True, observer=None):
    """Integrate with N fixed steps from t0 to T; returns (state at T, Newton iterations).

    ``observer(n, t, u)`` is called after every step.  Non-finite states are
    propagated, not raised; Newton failures raise StepFailure.
    """
    dt = np.dtype(dtype)
    T = problem.T if T is None else T
    t0 = dt.type(problem.t0)
    h = (dt.type(T) - t0) / N
    if method == "it-linear":
        lin = spec.linear
        u = dt.type(lin.u0)
        for n in range(N):
            u = linear_it_step(lin, R, t0 + (n + 1) * h, h, u)
            if observer is not None:
                observer(n + 1, t0 + (n + 1) * h, np.array([u]))
        return np.array([u], dtype=dt), 0
    stepper = _Stepper(method, R, problem, spec, newton)
    u = problem.u0.astype(dt)
    c = np.zeros_like(u)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(N):
            d, lo = stepper.increment(u, t0 + n * h, h)
            if compensated:
                # the state is u + c with c the exact rounding remainder
                s, e = _two_sum(u, d)
                c = c + e if lo is None else c + (e + lo)
                u, c = _two_sum(s, c)
            else:
                u = u + d
            if observer is not None:
                observer(n + 1, t0 + (n + 1) * h, u)
            if not np.all(np.isfinite(u)):
                u = np.full_like(u, np.nan)
                break
    return u, stepper.iterations


def integrate(spec: catalog.ProblemSpec, method: str, R: int, N: int, **kwargs):
    """``integrate_problem`` on a catalog entry, returning observed components only."""
    u, iters = integrate_problem(spec.problem, method, R, N, spec=spec, **kwargs)
    if method != "it-linear":
        u = u[list(spec.observed)]
    return u, iters


def observed_orders(rows: Sequence[ReportRow]) -> None:
    """Fill ``order`` for each row whose N/2 counterpart is present and both errors finite."""
    by_n = {r.N: r for r in rows}
    for r in rows:
        r.order = None
        if r.N % 2:
            continue
        coarse = by_n.get(r.N // 2)
        if coarse is None:
            continue
        a, b = coarse.error, r.error
        if math.isfinite(a) and math.isfinite(b) and a > 0 and b > 0:
            r.order = math.log2(a / b)


def _l1(u, target) -> float:
    diff = np.abs(np.asarray(u) - np.asarray(target))
    return float(np.sum(diff))


def run_grid(config: RunConfig, spec: catalog.ProblemSpec | None = None) -> ConvergenceReport:
    """Run ``config.method`` for every N in ``config.steps``; never aborts on a failed row."""
    spec = config.validate(spec)
    dt = np.dtype(config.dtype)
    T = spec.reference_T if config.T is None else config.T
    newton = config.newton()
    target = None
    if config.norm == "final":
        target = spec.target(dt, T)
    report = ConvergenceReport(metadata={
        "problem": spec.name, "method": config.method, "order": config.order,
        "dtype": dt.name, "T": T, "norm": config.norm, "tol": config.tol,
        "compensated": config.compensated,
    })
    exact = spec.problem.exact
    observed = list(spec.observed)
    for N in config.steps:
        h = float((dt.type(T) - dt.type(spec.problem.t0)) / N)
        worst = [0.0]

        def track(n, t, u, worst=worst):
            cur = u if config.method == "it-linear" else u[observed]
            ref = np.asarray(exact(t), dtype=dt)[observed]
            worst[0] = max(worst[0], _l1(cur, ref)) if np.all(np.isfinite(cur)) else math.nan

        start = time.perf_counter()
        note = ""
        iters = 0
        try:
            u, iters = integrate(spec, config.method, config.order, N, T=T, dtype=dt, newton=newton,
                                 compensated=config.compensated,
                                 observer=track if config.norm == "max" else None)
            if config.norm == "final":
                err = _l1(u, target) if np.all(np.isfinite(u)) else math.nan
            else:
                err = worst[0] if np.all(np.isfinite(u)) else math.nan
            if not math.isfinite(err):
                err, note = math.nan, "non-finite state"
        except StepFailure as exc:
            err, note = math.nan, f"newton failure: {exc}"
        seconds = time.perf_counter() - start
        report.rows.append(ReportRow(N, h, err, None, iters, seconds, note))
    observed_orders(report.rows)
    report.metadata["stencil_cache"] = make_stencil.cache_info()._asdict()
    return report


def _fmt(x: float, spec: str) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "NaN"
    return format(x, spec)


def emit_csv(report: ConvergenceReport, path) -> Path:
    """Write ``N,h,error,order,newton_iters,seconds``; errors with 6 significant digits."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in report.rows:
                w.writerow([r.N, _fmt(r.h, ".6e"), _fmt(r.error, ".5e"), _fmt(r.order, ".4f"),
                            r.newton_iters, _fmt(r.seconds, ".4e")])
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def read_csv(path) -> ConvergenceReport:
    """Parse a file written by ``emit_csv`` back into a report (metadata is not stored)."""
    rows = []
    with Path(path).open(newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ReportRow(
                N=int(rec["N"]), h=float(rec["h"]), error=float(rec["error"]),
                order=float(rec["order"]) if rec["order"] else None,
                newton_iters=int(rec["newton_iters"]), seconds=float(rec["seconds"]),
            ))
    return ConvergenceReport(rows)


def emit_performance_series(reports: Sequence[ConvergenceReport], out_dir) -> Path:
    """One ``seconds,h,error`` file per report plus ``manifest.txt``.

    Manifest lines are ``<path>\\t<label>\\t<omitted>``, where the last field
    lists the step counts whose non-finite rows were left out.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = []
        for rep in reports:
            label = rep.label
            path = out_dir / f"{label}.csv"
            omitted = []
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["seconds", "h", "error"])
                for r in rep.rows:
                    if not math.isfinite(r.error):
                        omitted.append(str(r.N))
                        continue
                    w.writerow([_fmt(r.seconds, ".4e"), _fmt(r.h, ".6e"), _fmt(r.error, ".5e")])
            lines.append(f"{path}\t{label}\t{'omitted=' + ','.join(omitted) if omitted else ''}")
        manifest = out_dir / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write series to {out_dir}: {exc}") from exc
    return manifest


def loglog_slope(report: ConvergenceReport, last: int = 4) -> float:
    """Least-squares slope of log(error) against log(h) over the finest ``last`` finite rows."""
    pts = [(r.h, r.error) for r in report.rows if math.isfinite(r.error) and r.error > 0][-last:]
    if len(pts) < 2:
        return math.nan
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class MethodComparison:
    reports: dict[str, ConvergenceReport]
    threshold: float
    first_finite: dict[str, int | None]
    first_below: dict[str, int | None]

    def table(self) -> str:
        methods = list(self.reports)
        head = f"{'N':>7}" + "".join(f"  {m + ' e(N)':>12}  {'o(N)':>7}" for m in methods)
        lines = [head]
        grids = [self.reports[m].rows for m in methods]
        for i, row in enumerate(grids[0]):
            cells = []
            for rows in grids:
                r = rows[i]
                cells.append(f"  {_fmt(r.error, '12.2e'):>12}  {_fmt(r.order, '7.2f') or '---':>7}")
            lines.append(f"{row.N:>7}" + "".join(cells))
        for m in methods:
            lines.append(f"{m}: first finite N={self.first_finite[m]}, "
                         f"first N with e<{self.threshold:g}: {self.first_below[m]}")
        return "\n".join(lines)


def compare_methods(problem: str, R: int, steps: Sequence[int], threshold: float = 1e-3,
                    methods: Sequence[str] = ("ait", "aet"), **config_kwargs) -> MethodComparison:
    """Run several methods on the same grid and locate where each becomes usable."""
    reports = {}
    spec = None
    for m in methods:
        cfg = RunConfig(problem, m, R, list(steps), **config_kwargs)
        spec = cfg.validate(spec)
        key = m if m not in reports else f"{m}#{len(reports)}"
        reports[key] = run_grid(cfg, spec)
    first_finite = {}
    first_below = {}
    for m, rep in reports.items():
        finite = [r.N for r in rep.rows if math.isfinite(r.error)]
        below = [r.N for r in rep.rows if math.isfinite(r.error) and r.error < threshold]
        first_finite[m] = finite[0] if finite else None
        first_below[m] = below[0] if below else None
    return MethodComparison(reports, threshold, first_finite, first_below)
