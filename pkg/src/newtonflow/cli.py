"""Command-line front end: ``solve``, ``basin``, ``field`` and ``compare``.

Exit codes: 0 success, 1 usage error, 2 runtime or solver failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adaptive import solve_adaptive
from .basins import (
    Criterion,
    SolverSpec,
    convergence_stats,
    grid_points,
    oracle_grid,
    read_oracle_cache,
    render_ppm,
    sample_grid,
    write_oracle_cache,
    write_stats_csv,
)
from .classical import ORACLE_DT, ORACLE_T_END, attractor_oracle, integrate_reference, solve_fixed_step
from .field import OK, SINGULAR, f_batch, field_batch, make_preconditioner, vnorm
from .outcome import SolveOutcome, SolverConfig, Status
from .problems import BuiltinId, builtin_problem

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

WORKERS_ENV = "NEWTONFLOW_WORKERS"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="newtonflow", description="Adaptive Newton iteration experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--problem", required=True, choices=[b.value for b in BuiltinId])
        p.add_argument(
            "--precond",
            default="newton",
            choices=["newton", "identity", "frozen"],
            help="frozen uses J at x0; basin and field freeze it at the first known root",
        )
        p.add_argument("--tau", type=float, default=0.01)
        p.add_argument("--eps", type=float, default=1e-8)
        p.add_argument("--t-lower", type=float, default=1e-9)
        p.add_argument("--n-max", type=int, default=100)
        p.add_argument("--reduce", type=float, default=0.5)
        p.add_argument("--out-dir", type=Path, default=Path("."))

    def grid(p: argparse.ArgumentParser, default_res: int) -> None:
        p.add_argument("--res", type=int, default=default_res, help="grid points per axis")
        p.add_argument("--domain", type=_floats, help="x_lo,x_hi,y_lo,y_hi (default: problem box)")

    p = sub.add_parser("solve", help="solve from one initial point and write the trace")
    common(p)
    p.add_argument("--x0", type=_floats)
    p.add_argument("--solver", default="adaptive", help="adaptive or fixed:<t>")
    p.add_argument("--trace", type=Path, help="trace CSV path (default: <out-dir>/trace.csv)")

    p = sub.add_parser("basin", help="sample basins of attraction on a grid")
    common(p)
    grid(p, 200)
    p.add_argument("--solver", action="append", help="adaptive, fixed:<t> or reference:<dt>; repeatable")
    p.add_argument("--criterion", default="plain", choices=[c.value for c in Criterion])
    p.add_argument("--oracle-cache", type=Path, help="oracle CSV; read if present, written otherwise")
    p.add_argument("--workers", type=int, default=_default_workers())
    p.add_argument("--no-mark-roots", action="store_true")

    p = sub.add_parser("field", help="sample the direction field on a grid")
    common(p)
    grid(p, 21)
    p.add_argument("--output", type=Path, help="CSV path (default: <out-dir>/field.csv)")

    p = sub.add_parser("compare", help="compare solvers against the reference flow from one point")
    common(p)
    p.add_argument("--x0", type=_floats)
    p.add_argument("--dt", type=float, default=1e-2, help="small fixed step and reference step")
    p.add_argument("--t-end", type=float, default=20.0, help="reference integration horizon")
    p.add_argument("--output", type=Path, help="CSV path (default: <out-dir>/compare.csv)")
    return parser


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(args.tau, args.eps, args.t_lower, args.n_max, args.reduce)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _x0(args, problem) -> np.ndarray:
    if args.x0 is None:
        raise UsageError("--x0 is required")
    if len(args.x0) != problem.dim or not np.all(np.isfinite(args.x0)):
        raise UsageError(f"--x0 needs {problem.dim} finite values")
    return np.array(args.x0)


def _precond(args, problem, x0=None):
    if args.precond == "frozen" and x0 is None:
        raise UsageError("--precond frozen needs an initial point")
    try:
        return make_preconditioner(args.precond, problem, x0)
    except Exception as exc:  # singular frozen Jacobian
        raise UsageError(f"cannot build preconditioner: {exc}") from None


def _solver(text: str) -> SolverSpec:
    try:
        return SolverSpec.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _domain(args, problem):
    if args.domain is None:
        return problem.domain
    if len(args.domain) != 4:
        raise UsageError("--domain needs x_lo,x_hi,y_lo,y_hi")
    return np.array(args.domain).reshape(2, 2)


def _run(problem, precond, x0, spec: SolverSpec, config: SolverConfig) -> SolveOutcome:
    if spec.kind == "adaptive":
        return solve_adaptive(problem, precond, x0, config)
    if spec.kind == "fixed":
        return solve_fixed_step(problem, precond, x0, spec.step, config)
    raise UsageError("solve runs adaptive or fixed:<t>; use compare for the reference flow")


def _open(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def cmd_solve(args) -> int:
    problem = builtin_problem(args.problem)
    config = _config(args)
    x0 = _x0(args, problem)
    spec = _solver(args.solver)
    precond = _precond(args, problem, x0)
    out = _run(problem, precond, x0, spec, config)
    path = args.trace or args.out_dir / "trace.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", *(f"x_{i}" for i in range(problem.dim)), "t", "gamma", "normF", "normf", "rejections"])
        for r in out.trace:
            w.writerow([r.k, *map(_fmt, r.x), _fmt(r.t), _fmt(r.gamma), _fmt(r.norm_F), _fmt(r.norm_f), r.rejections])
    root = "-" if out.root_index is None else out.root_index
    x = ",".join(_fmt(v) for v in out.x)
    print(f"status={out.status} iterations={out.iterations} evaluations={out.evaluations} root={root} x={x}")
    return EXIT_OK if out.converged else EXIT_FAILURE


def cmd_basin(args) -> int:
    problem = builtin_problem(args.problem)
    config = _config(args)
    if args.res < 2:
        raise UsageError(f"--res must be at least 2, got {args.res}")
    if args.workers < 1:
        raise UsageError("--workers must be positive")
    specs = [_solver(s) for s in (args.solver or ["adaptive"])]
    precond = _precond(args, problem, problem.known_roots[0] if args.precond == "frozen" else None)
    domain = _domain(args, problem)
    n = args.res
    criterion = Criterion(args.criterion)

    grids = []
    for spec in specs:
        try:
            grids.append(sample_grid(problem, spec, domain, n, n, config, precond, args.workers))
        except ValueError as exc:
            raise UsageError(str(exc)) from None

    oracle = None
    if criterion is Criterion.CORRECT:
        cache = args.oracle_cache or args.out_dir / f"oracle_{problem.name}_{n}.csv"
        if cache.exists():
            oracle = read_oracle_cache(cache, n, n)
        else:
            oracle = oracle_grid(problem, domain, n, n, ORACLE_DT, ORACLE_T_END, config, args.workers)
            cache.parent.mkdir(parents=True, exist_ok=True)
            write_oracle_cache(cache, oracle)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for spec, g in zip(specs, grids):
        (args.out_dir / f"basin_{problem.name}_{spec.tag}_{n}.ppm").write_bytes(
            render_ppm(g, mark_roots=not args.no_mark_roots)
        )
        report = convergence_stats(g, criterion, oracle)
        reports.append(report)
        print(f"{report.solver}: {report.percent:.2f}% {criterion.value} ({report.convergent}/{report.cells})")
    write_stats_csv(reports, args.out_dir / f"stats_{problem.name}_{n}.csv")
    return EXIT_OK


def cmd_field(args) -> int:
    problem = builtin_problem(args.problem)
    if args.res < 2:
        raise UsageError(f"--res must be at least 2, got {args.res}")
    domain = _domain(args, problem)
    precond = _precond(args, problem, problem.known_roots[0] if args.precond == "frozen" else None)
    X = grid_points(domain, args.res, args.res)
    ev = field_batch(problem, precond, X)
    path = args.output or args.out_dir / "field.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "Fx", "Fy", "singular_flag"])
        for x, F, code in zip(X, ev.values, ev.code):
            F = F if code == OK else (np.nan, np.nan)  # no field value off the regular set
            w.writerow([_fmt(x[0]), _fmt(x[1]), _fmt(F[0]), _fmt(F[1]), int(code == SINGULAR)])
    return EXIT_OK


def _normf(problem, X) -> np.ndarray:
    values, finite = f_batch(problem, X)
    return np.where(finite, vnorm(np.where(finite[:, None], values, 0.0)), np.inf)


def cmd_compare(args) -> int:
    problem = builtin_problem(args.problem)
    config = _config(args)
    x0 = _x0(args, problem)
    precond = _precond(args, problem, x0)
    if not 0 < args.dt <= 1e-2:
        print(f"error: --dt must lie in (0, 1e-2], got {args.dt}", file=sys.stderr)
        return EXIT_FAILURE
    if not args.t_end > 0:
        print(f"error: --t-end must be positive, got {args.t_end}", file=sys.stderr)
        return EXIT_FAILURE

    rows: list[tuple] = []

    def add(name: str, out: SolveOutcome) -> None:
        time = 0.0
        for r in out.trace:
            rows.append((name, r.k, time, *r.x, r.norm_f))
            time += r.t
        rows.append((name, len(out.trace), time, *out.x, _normf(problem, out.x[None, :])[0]))
        print(f"{name}: status={out.status} iterations={out.iterations}")

    adaptive = solve_adaptive(problem, precond, x0, config)
    add("adaptive", adaptive)
    add("fixed:1", solve_fixed_step(problem, precond, x0, 1.0, config))
    add(f"fixed:{args.dt:g}", solve_fixed_step(problem, precond, x0, args.dt, config))
    ref = integrate_reference(problem, x0, args.dt, args.t_end, precond, config.eps)
    normf = _normf(problem, ref.points)
    for k, (t, x, nf) in enumerate(zip(ref.times, ref.points, normf)):
        rows.append((f"reference:{args.dt:g}", k, t, *x, nf))
    print(f"reference:{args.dt:g}: status={ref.status.value} samples={ref.times.size}")
    exact = attractor_oracle(problem, x0, config)
    print(f"adaptive root={adaptive.root_index} exact attractor={exact}")

    path = args.output or args.out_dir / "compare.csv"
    with _open(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["solver", "k", "time", *(f"x_{i}" for i in range(problem.dim)), "normf"])
        for name, k, t, *rest in rows:
            w.writerow([name, k, _fmt(t), *map(_fmt, rest)])
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "basin": cmd_basin, "field": cmd_field, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"newtonflow {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"newtonflow {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
