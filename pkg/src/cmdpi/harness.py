"""Experiment orchestration: the toy MOMDP, preference sweeps and export."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import distance_to_front, pareto_front_oracle
from .momdp import Momdp, MomdpError, load_momdp, validate
from .scalarization import StchParams, linear_utility, preference_grid, stch_utility, utopia_from_momdp
from .solvers import SolverConfig, random_policy, solve_batch, value_iteration_linear

log = logging.getLogger(__name__)

METHODS = ("linear_vi", "cmdpi", "capql")
DEFAULT_TAUS = (1.0, 0.1, 0.01)


def toy_momdp() -> Momdp:
    """Four states on a line, two actions, two objectives, gamma = 0.8.

    Action 0 moves left deterministically (reflecting at state 0); action 1
    moves right w.p. 0.9 and left w.p. 0.1 (reflecting at state 3).
    """
    P0 = np.array([
        [1.0, 0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
    ])
    P1 = np.array([
        [0.1, 0.9, 0.0, 0.0],
        [0.1, 0.0, 0.9, 0.0],
        [0.0, 0.1, 0.0, 0.9],
        [0.0, 0.0, 0.1, 0.9],
    ])
    R = np.zeros((4, 2, 2))
    R[1, 0] = (0.0, 2.0)
    R[2, 0] = (0.0, 1.6)
    R[3, 0] = (1.0, 0.0)
    R[3, 1] = (0.0, 1.0)
    env = Momdp(kernel=np.stack([P0, P1]), rewards=R, gamma=0.8, p0=np.full(4, 0.25))
    validate(env)
    return env


BUILTIN_ENVS = {"toy": toy_momdp}


def resolve_env(env) -> Momdp:
    """Accept a :class:`Momdp`, ``"builtin:<name>"`` or a path to a MOMDP JSON file."""
    if isinstance(env, Momdp):
        return env
    name = str(env)
    if name.startswith("builtin:"):
        key = name.split(":", 1)[1]
        if key not in BUILTIN_ENVS:
            raise MomdpError(f"unknown builtin environment {key!r}; available: {sorted(BUILTIN_ENVS)}")
        return BUILTIN_ENVS[key]()
    return load_momdp(name)


def random_momdp(n_states: int, n_actions: int, n_objectives: int, seed: int, gamma: float = 0.9) -> Momdp:
    """Random dense MOMDP with non-negative rewards and full-support ``p0``."""
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.ones(n_states), size=(n_actions, n_states))
    rewards = rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_objectives))
    p0 = rng.dirichlet(np.ones(n_states))
    env = Momdp(kernel=kernel, rewards=rewards, gamma=gamma, p0=p0)
    validate(env)
    return env


@dataclass
class SweepSpec:
    env: object = "builtin:toy"
    method: str = "cmdpi"
    n_prefs: int = 100
    delta: float = 0.0
    taus: tuple = DEFAULT_TAUS
    alphas: tuple | None = None  # paired 1/tau when None
    seeds: tuple = ()
    max_outer_iters: int = 2000
    outer_tol: float = 1e-9
    inner_tol: float = 1e-10
    capql_utility: str = "stch"
    record_timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.n_prefs < 2:
            raise ValueError("preference grid needs at least 2 points")
        if self.method != "linear_vi" and not self.taus:
            raise ValueError("need at least one tau")
        if self.alphas is not None and len(self.alphas) != len(self.taus):
            raise ValueError("alphas must pair one-to-one with taus")

    def configs(self) -> list[tuple[float | None, float | None]]:
        if self.method == "linear_vi":
            return [(None, None)]
        alphas = self.alphas if self.alphas is not None else [1.0 / t for t in self.taus]
        return [(float(t), float(a)) for t, a in zip(self.taus, alphas)]


@dataclass
class SweepRow:
    method: str
    tau: float | None
    alpha: float | None
    seed: int
    omega: tuple
    J: tuple
    utility: float
    iters: int
    dist_front: float
    runtime_ms: float
    omega_index: int = 0
    error: str | None = None


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def distinct_J(self, tol: float = 1e-8) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for row in self.rows:
            j = np.asarray(row.J)
            if np.all(np.isfinite(j)) and not any(np.abs(j - u).max() <= tol for u in out):
                out.append(j)
        return out

    def to_csv(self) -> str:
        m = len(self.rows[0].omega) if self.rows else 0
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(
            ["method", "tau", "alpha", "seed", *[f"omega_{i + 1}" for i in range(m)],
             *[f"J_{i + 1}" for i in range(m)], "utility", "iters", "dist_front", "runtime_ms"]
        )
        for r in self.rows:
            writer.writerow(
                [r.method, _fmt(r.tau), _fmt(r.alpha), r.seed, *map(_fmt, r.omega), *map(_fmt, r.J),
                 _fmt(r.utility), r.iters, _fmt(r.dist_front), _fmt(r.runtime_ms)]
            )
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"rows": [asdict(r) for r in self.rows]}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SweepResult":
        rows = []
        for d in json.loads(text)["rows"]:
            d["omega"] = tuple(d["omega"])
            d["J"] = tuple(d["J"])
            rows.append(SweepRow(**d))
        return cls(rows=rows)


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".17g")


def _run_config(env, method, tau, alpha, prefs, seeds, spec, front, utopia):
    """All (preference, seed) runs of one method configuration."""
    t0 = time.perf_counter()
    jobs = [(i, w, seed) for i, w in enumerate(prefs) for seed in seeds]
    results: dict[tuple[int, int], tuple] = {}
    if method == "linear_vi":
        for i, w, seed in jobs:
            try:
                pi, J = value_iteration_linear(env, w)
                results[i, seed] = (J, linear_utility(J, w), 0, None)
            except Exception as exc:  # recorded per row, sweep continues
                results[i, seed] = (None, math.nan, 0, repr(exc))
    else:
        params = StchParams(tau=tau, utopia=utopia)
        cfg = SolverConfig(alpha=alpha, max_outer_iters=spec.max_outer_iters,
                           outer_tol=spec.outer_tol, inner_tol=spec.inner_tol)
        utility = spec.capql_utility if method == "capql" else "stch"
        inits = {seed: random_policy(env, seed) for seed in seeds}

        def run(batch):
            traces = solve_batch(env, [w for _, w, _ in batch], params, cfg, [inits[s] for _, _, s in batch],
                                 method=method, utility=utility, history=False)
            for (i, w, seed), tr in zip(batch, traces):
                results[i, seed] = (tr.J, stch_utility(tr.J, w, params), tr.iterations, None)

        try:
            run(jobs)
        except Exception:
            for job in jobs:
                try:
                    run([job])
                except Exception as exc:
                    results[job[0], job[2]] = (None, math.nan, 0, repr(exc))
    elapsed_ms = (time.perf_counter() - t0) * 1e3
    m = env.n_objectives
    rows = []
    for i, w, seed in jobs:
        J, util, iters, err = results[i, seed]
        if err is not None:
            log.warning("run %s tau=%s omega=%s seed=%s failed: %s", method, tau, w.omega.tolist(), seed, err)
            J = np.full(m, math.nan)
        dist = distance_to_front(front, J) if front is not None and err is None else math.nan
        rows.append(SweepRow(
            method=method, tau=tau, alpha=alpha, seed=seed,
            omega=tuple(float(x) for x in w.omega), J=tuple(float(x) for x in J),
            utility=float(util), iters=int(iters), dist_front=float(dist),
            runtime_ms=elapsed_ms / len(jobs) if spec.record_timing else 0.0,
            omega_index=i, error=err,
        ))
    return rows


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Run every (configuration, preference, seed) combination of ``spec``.

    Objective vectors are evaluated exactly. Rows come back ordered by
    configuration (as listed in the spec), preference index and seed whatever
    the execution order, and timing
    is only recorded when ``spec.record_timing`` is set, so identical specs
    give identical results.
    """
    env = resolve_env(spec.env)
    prefs = preference_grid(spec.n_prefs, env.n_objectives, spec.delta)
    seeds = list(spec.seeds) if spec.seeds else [0]
    front = None
    if env.n_objectives == 2:
        try:
            front = pareto_front_oracle(env)
        except MomdpError:
            log.info("deterministic-policy enumeration too large; dist_front left empty")
    utopia = utopia_from_momdp(env)
    configs = spec.configs()
    args = [(env, spec.method, tau, alpha, prefs, seeds, spec, front, utopia) for tau, alpha in configs]
    if spec.jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            chunks = list(pool.map(_run_config_star, args))
    else:
        chunks = [_run_config(*a) for a in args]
    # pool.map keeps submission order: configs as listed, then preference index, then seed
    return SweepResult(rows=[row for chunk in chunks for row in chunk])


def _run_config_star(a):
    return _run_config(*a)


def export(result: SweepResult, path, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        text = result.to_csv()
    elif fmt == "json":
        text = result.to_json() + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return path
