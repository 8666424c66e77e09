"""Command-line entry point: ``taylor-ode {bench,compare,stencil,table}``."""
from __future__ import annotations

import argparse
import logging
import math
import sys

from . import problems as catalog
from .bench import (METHODS, NORMS, ConvergenceReport, RunConfig, compare_methods, emit_csv,
                    emit_performance_series, run_grid)
from .stencil import make_stencil

# grids used to regenerate the four benchmark tables
TABLES = {
    1: ("example1", ("ait", "it-linear"), (2, 3, 4, 5, 6), [10, 20, 40, 80, 160, 320, 640]),
    2: ("example2", ("it-scalar", "ait"), (2, 3, 4, 5, 6), [10, 20, 40, 80, 160, 320, 640, 1280, 2560]),
    3: ("example3", ("ait", "aet"), (2, 3, 4), [80, 160, 320, 640, 1280, 2560, 5120, 10240]),
    4: ("example4", ("ait", "aet"), (2, 3, 4, 5), [10, 20, 40, 80, 160, 320, 640]),
}


def parse_steps(text: str) -> list[int]:
    """Comma list of step counts; ``a,b,...,c`` continues the ratio b/a up to c."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." not in parts:
        return [int(p) for p in parts]
    i = parts.index("...")
    head, tail = [int(p) for p in parts[:i]], [int(p) for p in parts[i + 1:]]
    if len(head) < 2 or len(tail) != 1 or head[0] <= 0 or head[1] % head[0]:
        raise ValueError(f"cannot expand step list {text!r}")
    ratio = head[1] // head[0]
    if ratio < 2:
        raise ValueError(f"step list {text!r} must grow geometrically")
    out = list(head)
    while out[-1] * ratio <= tail[0]:
        out.append(out[-1] * ratio)
    if out[-1] != tail[0]:
        raise ValueError(f"{tail[0]} is not reached from {head[0]} by factors of {ratio}")
    return out


def _steps_arg(text):
    try:
        return parse_steps(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def format_report(report: ConvergenceReport) -> str:
    m = report.metadata
    lines = [f"# {report.label}  dtype={m.get('dtype')}  T={m.get('T')}  norm={m.get('norm')}",
             f"{'N':>7} {'h':>12} {'e(N)':>12} {'o(N)':>8} {'iters':>7} {'seconds':>9}"]
    for r in report.rows:
        err = "NaN" if math.isnan(r.error) else f"{r.error:.2e}"
        order = "---" if r.order is None else f"{r.order:.2f}"
        lines.append(f"{r.N:>7} {r.h:>12.4e} {err:>12} {order:>8} {r.newton_iters:>7} {r.seconds:>9.3f}")
        if r.note:
            lines.append(f"{'':>7}   {r.note}")
    return "\n".join(lines)


def cmd_bench(args) -> int:
    cfg = RunConfig(args.problem, args.method, args.order, args.steps, tol=args.tol,
                    max_iter=args.max_iter, out=args.out, norm=args.norm, dtype=args.dtype,
                    T=args.T, compensated=not args.plain_sum, cache_dir=args.cache_dir)
    report = run_grid(cfg)
    print(format_report(report))
    if args.out:
        emit_csv(report, args.out)
    if args.series_dir:
        emit_performance_series([report], args.series_dir)
    return 0 if len(report.rows) == len(cfg.steps) else 1


def cmd_compare(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(","))
    cmp = compare_methods(args.problem, args.order, args.steps, threshold=args.threshold,
                          methods=methods, tol=args.tol, dtype=args.dtype, T=args.T,
                          cache_dir=args.cache_dir)
    print(cmp.table())
    if args.series_dir:
        emit_performance_series(list(cmp.reports.values()), args.series_dir)
    return 0 if all(len(r.rows) == len(args.steps) for r in cmp.reports.values()) else 1


def cmd_stencil(args) -> int:
    st = make_stencil(args.p, args.q)
    print(f"derivative {st.derivative_order}, accuracy order {st.order}, half-width {st.half_width}")
    for j, exact, w in zip(st.offsets, st.exact, st.weights):
        print(f"{int(j):>4}  {str(exact):>24}  {w: .17e}")
    return 0


def cmd_table(args) -> int:
    problem, methods, orders, steps = TABLES[args.number]
    orders = [args.order] if args.order else orders
    reports = []
    for R in orders:
        for m in methods:
            rep = run_grid(RunConfig(problem, m, R, steps, dtype=args.dtype, T=args.T,
                                     cache_dir=args.cache_dir))
            reports.append(rep)
            print(format_report(rep))
            print()
    if args.series_dir:
        emit_performance_series(reports, args.series_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taylor-ode",
                                     description="Convergence and stability runs for Taylor ODE methods.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--problem", required=True, choices=catalog.names())
        p.add_argument("--order", "-R", type=int, required=True)
        p.add_argument("--steps", type=_steps_arg, required=True,
                       help="comma list, e.g. 80,160,...,10240")
        p.add_argument("--tol", type=float, default=None, help="Newton residual tolerance")
        p.add_argument("--dtype", default="float64", choices=("float64", "longdouble"))
        p.add_argument("--T", type=float, default=None, help="final time (problem default if unset)")
        p.add_argument("--cache-dir", default=None, help="directory for cached reference solutions")
        p.add_argument("--series-dir", default=None, help="write plot data files and a manifest here")

    p = sub.add_parser("bench", help="one method over a grid of step counts")
    common(p)
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--norm", default="final", choices=NORMS)
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--plain-sum", action="store_true", help="disable compensated state summation")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="several methods on the same grid")
    common(p)
    p.add_argument("--methods", default="ait,aet")
    p.add_argument("--threshold", type=float, default=1e-3)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stencil", help="print centered finite-difference weights")
    p.add_argument("--p", type=int, required=True, help="derivative order")
    p.add_argument("--q", type=int, required=True, help="accuracy pairs (order 2q)")
    p.set_defaults(func=cmd_stencil)

    p = sub.add_parser("table", help="regenerate one of the four benchmark tables")
    p.add_argument("number", type=int, choices=sorted(TABLES))
    p.add_argument("--order", "-R", type=int, default=None, help="only this order")
    p.add_argument("--dtype", default="float64", choices=("float64", "longdouble"))
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--series-dir", default=None)
    p.set_defaults(func=cmd_table)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError) as exc:
        print(f"taylor-ode: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"taylor-ode: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
