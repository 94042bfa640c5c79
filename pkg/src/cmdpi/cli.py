"""Command-line entry point: ``cmdpi {solve,sweep,verify,metrics}``.

Machine-readable JSON goes to stdout, human messages to stderr. Exit codes:
0 success, 1 runtime failure, 2 usage error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from .analysis import distance_to_front, metric_report, pareto_front_oracle
from .harness import SweepSpec, export, resolve_env, run_sweep
from .momdp import MomdpError
from .scalarization import Preference, StchParams, linear_utility, preference_grid, stch_utility, utopia_from_momdp
from .solvers import SolverConfig, SolveTrace, IterRecord, capql_planning, cmdpi, random_policy, value_iteration_linear
from .verify import SUITES, verify_all

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VERIFY = 0, 1, 2, 3
SEED_ENV_VAR = "CMDPI_SEED"

log = logging.getLogger("cmdpi")


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    command: str
    env: str
    seed: int | None
    out: str | None


def _floats(text: str, name: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{name}: empty list")
    return vals


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated integers, got {text!r}") from None


def _seed(flag: int | None) -> int | None:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw == "":
        return flag
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _front_or_none(env):
    if env.n_objectives != 2:
        return None
    try:
        return pareto_front_oracle(env)
    except MomdpError:
        return None


def cmd_solve(args) -> int:
    env = resolve_env(args.env)
    try:
        pref = Preference(_floats(args.omega, "--omega"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if pref.omega.size != env.n_objectives:
        raise UsageError(f"--omega has {pref.omega.size} entries, environment has {env.n_objectives} objectives")
    seed = _seed(args.seed)
    params = StchParams(args.tau, utopia_from_momdp(env))
    if args.method == "vi":
        pi, J = value_iteration_linear(env, pref)
        trace = SolveTrace(method="vi", omega=pref.omega,
                           records=[IterRecord(0, pi, J, linear_utility(J, pref), 0.0, 0.0)],
                           termination="converged")
        utility = linear_utility(J, pref)
    else:
        cfg = SolverConfig(alpha=args.alpha, max_outer_iters=args.iters, outer_tol=args.outer_tol)
        pi0 = random_policy(env, seed if seed is not None else 0)
        if args.method == "cmdpi":
            trace = cmdpi(env, pref, params, cfg, pi0)
        else:
            trace = capql_planning(env, pref, params, cfg, pi0, utility=args.capql_utility)
        J = trace.J
        utility = stch_utility(J, pref, params)
    front = _front_or_none(env)
    out = {
        "method": args.method,
        "omega": pref.omega.tolist(),
        "J": [float(x) for x in J],
        "utility": float(utility),
        "iters": trace.iterations,
        "termination": trace.termination,
        "dist_front": None if front is None else distance_to_front(front, J),
    }
    if args.out:
        _write(args.out, trace.to_json() + "\n")
        print(f"trace written to {args.out}", file=sys.stderr)
    print(json.dumps(out))
    return EXIT_OK


def cmd_sweep(args) -> int:
    method = {"vi": "linear_vi"}.get(args.method, args.method)
    seeds = _ints(args.seeds, "--seeds") if args.seeds else []
    env_seed = _seed(None)
    if env_seed is not None:
        seeds = [env_seed]
    taus = tuple(_floats(args.tau_list, "--tau-list"))
    alphas = tuple(_floats(args.alpha_list, "--alpha-list")) if args.alpha_list else None
    try:
        spec = SweepSpec(env=args.env, method=method, n_prefs=args.n_prefs, delta=args.delta, taus=taus,
                         alphas=alphas, seeds=tuple(seeds), max_outer_iters=args.iters,
                         capql_utility=args.capql_utility, record_timing=args.timing,
                         jobs=args.jobs or os.cpu_count() or 1)
        preference_grid(spec.n_prefs, 2, spec.delta)  # surface infeasible delta as a usage error
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    with open(args.out, "a", encoding="utf-8"):
        pass  # fail fast on an unwritable destination
    result = run_sweep(spec)
    export(result, args.out, args.format)
    failed = sum(r.error is not None for r in result.rows)
    print(f"{len(result.rows)} rows written to {args.out} ({failed} failed)", file=sys.stderr)
    print(json.dumps({"rows": len(result.rows), "failed": failed, "out": args.out}))
    return EXIT_OK


def cmd_verify(args) -> int:
    env = resolve_env(args.env)
    suites = args.suite or None
    report = verify_all(env, args.out, suites=suites)
    for e in report.entries:
        status = "PASS" if e.passed else "FAIL"
        print(f"[{status}] {e.suite}: {e.metric} measured={e.measured:.6g} bound={e.bound:.6g}", file=sys.stderr)
    print(report.to_json())
    return EXIT_OK if report.passed else EXIT_VERIFY


def read_points(path: str) -> np.ndarray:
    """Objective vectors from a CSV: the ``J_*`` columns of a sweep export, or
    every column of a plain numeric table with or without a header."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: no rows")
    header = rows[0]
    try:
        [float(c) for c in header]
        body, cols = rows, list(range(len(header)))
    except ValueError:
        body = rows[1:]
        j_cols = [i for i, name in enumerate(header) if name.strip().startswith("J_")]
        cols = j_cols or list(range(len(header)))
    try:
        P = np.array([[float(r[i]) for i in cols] for r in body], dtype=float)
    except (ValueError, IndexError):
        raise UsageError(f"{path}: malformed numeric CSV") from None
    if P.size == 0:
        raise UsageError(f"{path}: no points")
    if not np.all(np.isfinite(P)):
        P = P[np.all(np.isfinite(P), axis=1)]
        if P.size == 0:
            raise UsageError(f"{path}: no finite points")
    return P


def cmd_metrics(args) -> int:
    P = read_points(args.points)
    m = P.shape[1]
    if args.ref_auto:
        ref = P.min(axis=0)
    else:
        ref = np.array(_floats(args.ref, "--ref"))
        if ref.size != m:
            raise UsageError(f"--ref has {ref.size} entries, points have {m} objectives")
    prefs = preference_grid(args.prefs, m)
    report = metric_report(P, ref, prefs, f"simplex-grid-n{args.prefs}-m{m}")
    print(report.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmdpi", description="Multi-objective MDP planning with smooth Tchebycheff scalarization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one preference")
    p.add_argument("--env", default="builtin:toy", help="builtin:<name> or MOMDP JSON path")
    p.add_argument("--method", choices=["vi", "cmdpi", "capql"], default="cmdpi")
    p.add_argument("--omega", required=True, help="comma-separated preference, e.g. 0.5,0.5")
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=None, help="KL step; default 1/tau")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--outer-tol", type=float, default=1e-9)
    p.add_argument("--capql-utility", choices=["stch", "linear"], default="stch")
    p.add_argument("--seed", type=int, default=None, help=f"init seed (overridden by ${SEED_ENV_VAR})")
    p.add_argument("--out", default=None, help="write the iteration trace JSON here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="run a preference sweep and export rows")
    p.add_argument("--env", default="builtin:toy")
    p.add_argument("--method", choices=["vi", "linear_vi", "cmdpi", "capql"], default="cmdpi")
    p.add_argument("--n-prefs", type=int, default=100)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--tau-list", default="1,0.1,0.01")
    p.add_argument("--alpha-list", default=None, help="paired with --tau-list; default 1/tau")
    p.add_argument("--seeds", default="", help=f"comma-separated seeds (overridden by ${SEED_ENV_VAR})")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--capql-utility", choices=["stch", "linear"], default="stch")
    p.add_argument("--jobs", type=int, default=None, help="worker processes; default all cores")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--timing", action="store_true", help="record runtime_ms (output no longer reproducible)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the guarantee verification suites")
    p.add_argument("--env", default="builtin:toy")
    p.add_argument("--suite", action="append", choices=list(SUITES), help="repeatable; default all")
    p.add_argument("--out", default=None, help="write the report JSON here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("metrics", help="HV, EUM and SP of a point set")
    p.add_argument("--points", required=True, help="CSV of objective vectors or a sweep export")
    ref = p.add_mutually_exclusive_group(required=True)
    ref.add_argument("--ref", help="comma-separated reference point")
    ref.add_argument("--ref-auto", action="store_true", help="component-wise minimum of the points")
    p.add_argument("--prefs", type=int, default=100, help="EUM preference grid size")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MomdpError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
