"""Command line entry point: ``pistop {figure1,values,hjb,simulate,verify}``.

Every command writes CSV (header row, comma separated, LF endings, 17
significant digits) into ``--out``. Files are written to a temporary name and
renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import checks
from . import exact_values as ev
from .hjb_solver import (
    ConvergenceError,
    SolverConfig,
    StoppingBoundary,
    extract_boundary,
    non_optimality_witness,
    solve_optimal,
)
from .montecarlo import DEFAULT_TRIALS, Strategy, estimate_pi_both, estimate_win
from .pi_process import ProcessState
from .plotting import plot_gap

log = logging.getLogger("pistop")

SEED_ENV = "PI_STOP_SEED"
DEFAULT_SEED = 20201


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def write_csv(path: str, header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    atomic_write(path, buf.getvalue())
    return path


def atomic_write(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def read_boundary(path: str) -> StoppingBoundary:
    """Load ``boundary.csv`` as written by ``pistop hjb``."""
    thresholds = {}
    u_min = 0.0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            u = row["u_star"]
            thresholds[int(row["n"])] = float(u) if u else None
            u_min = min(u_min, float(row.get("u_min") or u_min))
    if not thresholds:
        raise ValueError(f"no thresholds in {path}")
    return StoppingBoundary(thresholds, resolution=1e-6, u_min=u_min)


def parse_counts(text: str) -> list[int]:
    """``"1,3,5-8"`` -> ``[1, 3, 5, 6, 7, 8]``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError(f"bad count list {text!r}")
    return out


def figure1_rows(n_max: int, tol: ev.Tolerance):
    rows = []
    for n in range(1, n_max + 1):
        s = ProcessState(-1.0, n)
        pi = ev.pi_record_is_best(s, tol)
        vs = ev.threshold_rule_value(s, tol)
        rows.append((n, pi, vs, pi - vs))
    return rows


def cmd_figure1(args) -> int:
    if args.n_max < 1:
        raise SystemExit("--n-max must be >= 1")
    tol = ev.Tolerance(args.tol)
    try:
        rows = figure1_rows(args.n_max, tol)
    except ArithmeticError as exc:
        print(f"figure1: series failure: {exc}", file=sys.stderr)
        return 2
    csv_path = write_csv(os.path.join(args.out, "figure1.csv"), ["n", "pi_tilde", "v_star", "gap"], rows)
    gaps = np.array([r[3] for r in rows])
    svg_path = plot_gap([r[0] for r in rows], gaps, os.path.join(args.out, "figure1.svg"))
    decreasing = bool(np.all(np.diff(gaps) < 0))
    print(f"wrote {csv_path} and {svg_path}")
    print(f"gap(n=1) = {fmt(gaps[0])}; min gap = {fmt(gaps.min())}; strictly decreasing: {decreasing}")
    bad = [r[0] for r in rows if not r[3] > 0]
    if bad:
        print(f"non-positive gap at n = {bad}", file=sys.stderr)
        return 1
    return 0


def cmd_values(args) -> int:
    if not args.u < 0:
        raise SystemExit("--u must be negative")
    tol = ev.Tolerance(args.tol)
    header = ["u", "n"]
    if args.mode in ("pi", "both"):
        header += ["pi_tilde", "pi_tail_bound"]
    if args.mode in ("vstar", "both"):
        header += ["v_star", "v_star_tail_bound"]
    rows = []
    for n in args.n:
        s = ProcessState(args.u, n)
        row = [args.u, n]
        if args.mode in ("pi", "both"):
            series = ev.pi_series(s, tol)
            row += [ev.pi_record_is_best(s, tol), series.tail_bound]
        if args.mode in ("vstar", "both"):
            series = ev.threshold_rule_series(s, tol)
            row += [series.value, series.tail_bound]
        rows.append(row)
    path = write_csv(os.path.join(args.out, "exact.csv"), header, rows)
    for row in rows:
        print(",".join(fmt(v) for v in row))
    print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_hjb(args) -> int:
    cfg = SolverConfig(u_min=args.u_min, step=args.step, n_max=args.n_max, closure=args.closure)
    try:
        table = solve_optimal(cfg)
    except ConvergenceError as exc:
        print(f"hjb: {exc}", file=sys.stderr)
        return 2
    boundary = extract_boundary(table)
    stride = max(1, args.csv_stride)
    cols = list(range(table.grid.size - 1, -1, -stride))[::-1]
    if cols[0] != 0:
        cols.insert(0, 0)
    n_rows = min(args.csv_n_max or table.n_max, table.n_max)
    rows = ((table.grid[c], n, table.values[n - 1, c]) for c in cols for n in range(1, n_rows + 1))
    vpath = write_csv(os.path.join(args.out, "values.csv"), ["u", "n", "V"], rows)
    bpath = write_csv(
        os.path.join(args.out, "boundary.csv"),
        ["n", "u_star", "u_min"],
        [(n, boundary.thresholds[n], cfg.u_min) for n in sorted(boundary.thresholds)],
    )
    print(f"wrote {vpath} and {bpath}")
    print(f"residual: max {table.residual.max_residual:.3e} (threshold {table.residual.threshold:.3e})")
    witness = non_optimality_witness(table)
    if witness:
        n, u, pi, v = witness
        print(f"non-optimality witness: n={n} u={fmt(u)} pi_tilde={fmt(pi)} V={fmt(v)}")
    else:
        print("no state with u < -1 where stopping beats continuing")
    return 0


def _exact_for(strategy: Strategy, state: ProcessState, tol: ev.Tolerance):
    if strategy.kind == "stop_never":
        return 0.0
    if strategy.kind == "stop_first_record":
        return ev.pi_record_is_best(state, tol)
    if strategy.kind == "fixed_threshold":
        if state.u > strategy.b:
            return ev.pi_record_is_best(state, tol)
        if state.u == strategy.b:
            return ev.threshold_rule_value(state, tol)
    return None


def build_strategy(args) -> Strategy:
    name = args.strategy
    if name == "one-over-e":
        return Strategy.one_over_e()
    if name == "threshold":
        if args.b is None:
            raise SystemExit("--strategy threshold needs --b")
        return Strategy.fixed_threshold(args.b)
    if name == "never":
        return Strategy.stop_never()
    if name == "first-record":
        return Strategy.stop_first_record()
    if not args.boundary:
        raise SystemExit("--strategy boundary needs --boundary PATH to a boundary.csv from `pistop hjb`")
    return Strategy.from_boundary(read_boundary(args.boundary))


def cmd_simulate(args) -> int:
    state = ProcessState(args.u, args.n)
    tol = ev.Tolerance(args.tol)
    if args.strategy == "pi":
        both = estimate_pi_both(state, args.trials, args.seed, workers=args.workers)
        rows = [("pi_indicator", state.u, state.n, e.trials, e.seed, e.mean, e.stderr) for e in (both.indicator,)]
        rows.append(("pi_direct", state.u, state.n, both.direct.trials, args.seed, both.direct.mean, both.direct.stderr))
        exact = ev.pi_record_is_best(state, tol)
        estimates = [both.indicator, both.direct]
    else:
        strategy = build_strategy(args)
        est = estimate_win(strategy, state, args.trials, args.seed, workers=args.workers)
        rows = [(strategy.label, state.u, state.n, est.trials, est.seed, est.mean, est.stderr)]
        exact = _exact_for(strategy, state, tol)
        estimates = [est]
    path = write_csv(
        os.path.join(args.out, "simulate.csv"), ["strategy", "u", "n", "trials", "seed", "mean", "stderr"], rows
    )
    for row, est in zip(rows, estimates):
        line = f"{row[0]}: mean={fmt(est.mean)} stderr={fmt(est.stderr)}"
        if exact is not None:
            line += f" exact={fmt(exact)} z={est.z_score(exact):+.3f}"
        print(line)
    print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    results = checks.run_all(seed=args.seed, tol=ev.Tolerance(args.tol))
    failed = [r for r in results if not r.passed]
    report = {
        "passed": not failed,
        "n_checks": len(results),
        "n_failed": len(failed),
        "checks": [r.to_dict() for r in results],
    }
    text = json.dumps(report, indent=2, default=_json_default) + "\n"
    atomic_write(os.path.join(args.out, "verify.json"), text)
    sys.stdout.write(text)
    for r in failed:
        print(f"FAILED {r.name}: observed {r.observed!r}, expected {r.expected!r} {r.detail}", file=sys.stderr)
    return 0 if not failed else 1


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return str(obj)


def default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env else DEFAULT_SEED


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="pistop-out", help="output directory")
    common.add_argument("--seed", type=int, default=default_seed(), help=f"master seed (env {SEED_ENV})")
    common.add_argument("--tol", type=float, default=ev.DEFAULT_TOL.abs_tol, help="absolute series tolerance")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="pistop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("figure1", parents=[common], help="gap between record-is-best and 1/e-rule values at u=-1")
    p.add_argument("--n-max", type=int, default=100)
    p.set_defaults(func=cmd_figure1)

    p = sub.add_parser("values", parents=[common], help="tabulate exact values")
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--n", type=parse_counts, default=[1], help="counts, e.g. 1,2,5-8")
    p.add_argument("--mode", choices=("pi", "vstar", "both"), default="both")
    p.set_defaults(func=cmd_values)

    p = sub.add_parser("hjb", parents=[common], help="solve the optimal value functions and stopping boundary")
    p.add_argument("--u-min", type=float, default=-4.0)
    p.add_argument("--step", type=float, default=1e-4)
    p.add_argument("--n-max", type=int, default=400)
    p.add_argument("--closure", choices=("classical_limit", "frozen"), default="classical_limit")
    p.add_argument("--csv-stride", type=int, default=100, help="write every k-th grid point to values.csv")
    p.add_argument("--csv-n-max", type=int, default=None, help="largest n written to values.csv")
    p.set_defaults(func=cmd_hjb)

    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo win probability of a strategy")
    p.add_argument(
        "--strategy", choices=("one-over-e", "threshold", "boundary", "never", "first-record", "pi"), required=True
    )
    p.add_argument("--b", type=float, default=None, help="threshold for --strategy threshold")
    p.add_argument("--boundary", default=None, help="boundary.csv written by `pistop hjb`")
    p.add_argument("--u", type=float, required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", parents=[common], help="run the invariant checks, JSON report")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
