"""Empirical checks of the theoretical guarantees on a concrete MOMDP.

Each suite returns :class:`VerificationEntry` rows with the measured value,
the bound it is compared against and a pass flag.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import adjacent_pairs, bregman_divergence, lipschitz_empirical, occupancy_weighted_kl, pareto_front_oracle
from .harness import random_momdp
from .momdp import Momdp, occupancy_measure
from .scalarization import (
    StchParams,
    lipschitz_constant,
    preference_grid,
    relative_smoothness_constant,
    utopia_from_momdp,
)
from .solvers import SolverConfig, mirror_descent_certificate, random_policy, solve_batch

log = logging.getLogger(__name__)

SUITES = ("uniqueness", "lipschitz", "bregman", "rate", "continuity")

# preferences used by the uniqueness suite
INTERIOR_PREFS = ((0.2, 0.8), (0.4, 0.6), (0.5, 0.5), (0.6, 0.4), (0.8, 0.2))


@dataclass
class VerificationEntry:
    suite: str
    metric: str
    bound: float
    measured: float
    passed: bool
    detail: dict | None = None

    def to_dict(self) -> dict:
        d = {"suite": self.suite, "metric": self.metric, "bound": self.bound,
             "measured": self.measured, "pass": self.passed}
        if self.detail:
            d["detail"] = self.detail
        return d


@dataclass
class VerifySettings:
    tau: float = 0.1
    n_inits: int = 20
    converge_iters: int = 20000
    converge_tol: float = 1e-11
    uniqueness_tol: float = 1e-5
    lipschitz_delta: float = 0.05
    lipschitz_n: int = 100
    bregman_pairs: int = 100
    bregman_tol: float = 1e-9
    bregman_random_envs: tuple = (1, 2)
    rate_iters: int = 200
    rate_oracle_factor: int = 10
    rate_slack: float = 1e-7
    continuity_iters: int = 50
    continuity_grids: tuple = (11, 21, 41, 81)
    continuity_delta: float = 0.05


def _converged_cfg(s: VerifySettings, **kw) -> SolverConfig:
    return SolverConfig(max_outer_iters=s.converge_iters, outer_tol=s.converge_tol, **kw)


def check_uniqueness(env: Momdp, s: VerifySettings) -> list[VerificationEntry]:
    """Final J from many random initializations must coincide for each preference."""
    params = StchParams(s.tau, utopia_from_momdp(env))
    m = env.n_objectives
    prefs = INTERIOR_PREFS if m == 2 else [p.omega for p in preference_grid(3, m, 1.0 / (2 * m))]
    omegas = [w for w in prefs for _ in range(s.n_inits)]
    inits = [random_policy(env, seed) for _ in prefs for seed in range(s.n_inits)]
    traces = solve_batch(env, omegas, params, _converged_cfg(s), inits, history=False)
    worst, per_pref = 0.0, {}
    for p_idx, w in enumerate(prefs):
        J = np.array([t.J for t in traces[p_idx * s.n_inits:(p_idx + 1) * s.n_inits]])
        gap = max(float(np.abs(a - b).max()) for a, b in itertools.combinations(J, 2))
        per_pref[str(tuple(float(x) for x in w))] = gap
        worst = max(worst, gap)
    return [VerificationEntry("uniqueness", "max pairwise final-J gap", s.uniqueness_tol, worst,
                              worst <= s.uniqueness_tol, {"per_preference": per_pref, "inits": s.n_inits})]


def check_lipschitz(env: Momdp, s: VerifySettings) -> list[VerificationEntry]:
    """Empirical ``||dJ|| / ||dw||`` over the floored grid against ``U / mu``."""
    utopia = utopia_from_momdp(env)
    front = pareto_front_oracle(env)
    V = front.vertices
    bounds = np.stack([V.min(axis=0), V.max(axis=0)], axis=1)
    constants = lipschitz_constant(bounds, utopia, s.lipschitz_delta, s.tau, env,
                                   np.full(env.n_objectives, 1.0 / env.n_objectives))
    prefs = preference_grid(s.lipschitz_n, env.n_objectives, s.lipschitz_delta)
    traces = solve_batch(env, prefs, StchParams(s.tau, utopia), _converged_cfg(s), history=False)
    report = lipschitz_empirical([(w, t.J) for w, t in zip(prefs, traces)], constants.lipschitz_L)
    return [VerificationEntry("lipschitz", "max adjacent ||dJ||/||dw||", constants.lipschitz_L,
                              report.max_ratio, report.ok, {"constants": constants.to_dict()})]


def bregman_identity_gap(env: Momdp, n_pairs: int, seed: int = 0) -> float:
    """Max ``|Gamma(pi, pi') - D(mu_pi | mu_pi')|`` over seeded full-support pairs."""
    worst = 0.0
    for i in range(n_pairs):
        pi = random_policy(env, seed + 2 * i)
        pi_ref = random_policy(env, seed + 2 * i + 1)
        kl = occupancy_weighted_kl(env, pi, pi_ref)
        breg = bregman_divergence(occupancy_measure(env, pi), occupancy_measure(env, pi_ref))
        worst = max(worst, abs(kl - breg))
    return worst


def check_bregman(env: Momdp, s: VerifySettings) -> list[VerificationEntry]:
    """The identity on ``env`` and on two seeded random environments."""
    envs = {"env": env}
    for seed in s.bregman_random_envs:
        envs[f"random_{seed}"] = random_momdp(6, 3, env.n_objectives, seed)
    gaps = {name: bregman_identity_gap(e, s.bregman_pairs) for name, e in envs.items()}
    worst = max(gaps.values())
    return [VerificationEntry("bregman", "max |Gamma - D_psi|", s.bregman_tol, worst, worst <= s.bregman_tol,
                              {"pairs_per_env": s.bregman_pairs, "per_env": gaps})]


def check_rate(env: Momdp, s: VerifySettings, omega=None) -> list[VerificationEntry]:
    """Run CMDPI with ``alpha = L_rel (1 - gamma)`` and certify the O(1/k) gap bound
    against a run ten times longer from the same initialization."""
    m = env.n_objectives
    w = np.full(m, 1.0 / m) if omega is None else np.asarray(omega, dtype=float)
    params = StchParams(s.tau, utopia_from_momdp(env))
    L_rel = relative_smoothness_constant(env, w, s.tau)
    alpha = L_rel * (1.0 - env.gamma)
    pi0 = random_policy(env, 0)
    short = SolverConfig(alpha=alpha, max_outer_iters=s.rate_iters, outer_tol=1e-300)
    long = SolverConfig(alpha=alpha, max_outer_iters=s.rate_iters * s.rate_oracle_factor, outer_tol=1e-300)
    trace = solve_batch(env, [w], params, short, [pi0])[0]
    oracle = solve_batch(env, [w], params, long, [pi0])[0]
    utilities = oracle.utilities()
    best = int(np.argmax(utilities))
    u_star = float(utilities[best])
    D0 = bregman_divergence(occupancy_measure(env, oracle.records[best].policy), occupancy_measure(env, pi0))
    cert = mirror_descent_certificate(trace, u_star, L_rel, D0, slack=s.rate_slack)
    return [VerificationEntry("rate", "max_k gap_k - (L_rel/k) D0", s.rate_slack, cert.max_excess, cert.ok,
                              {"L_rel": L_rel, "alpha": alpha, "D0": D0, "u_star": u_star,
                               "violations": cert.violations, "final_gap": float(cert.gap[-1])})]


def continuity_gaps(env: Momdp, s: VerifySettings) -> list[float]:
    """Max adjacent ``||pi_K(w) - pi_K(w')||_inf`` for each grid in ``continuity_grids``."""
    params = StchParams(s.tau, utopia_from_momdp(env))
    cfg = SolverConfig(max_outer_iters=s.continuity_iters, outer_tol=1e-300)
    pi0 = random_policy(env, 0)
    gaps = []
    for n in s.continuity_grids:
        prefs = preference_grid(n, env.n_objectives, s.continuity_delta)
        traces = solve_batch(env, prefs, params, cfg, [pi0] * len(prefs), history=False)
        W = np.array([p.omega for p in prefs])
        gaps.append(max(float(np.abs(traces[i].policy - traces[j].policy).max()) for i, j in adjacent_pairs(W)))
    return gaps


def check_continuity(env: Momdp, s: VerifySettings) -> list[VerificationEntry]:
    """Halving the grid spacing should halve the largest adjacent policy gap.

    Each halving passes when the gap ratio is at least 2 up to a factor-4
    slack, i.e. ratio >= 0.5; the finest gap must also be below the coarsest.
    """
    gaps = continuity_gaps(env, s)
    ratios = [a / b if b > 0 else float("inf") for a, b in zip(gaps[:-1], gaps[1:])]
    worst = min(ratios)
    ok = worst >= 2.0 / 4.0 and gaps[-1] < gaps[0]
    return [VerificationEntry("continuity", "min gap ratio per grid halving", 0.5, worst, ok,
                              {"grids": list(s.continuity_grids), "gaps": gaps, "ratios": ratios,
                               "iters": s.continuity_iters})]


_RUNNERS = {
    "uniqueness": check_uniqueness,
    "lipschitz": check_lipschitz,
    "bregman": check_bregman,
    "rate": check_rate,
    "continuity": check_continuity,
}


@dataclass
class VerificationReport:
    entries: list[VerificationEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "entries": [e.to_dict() for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(_strict(self.to_dict()), indent=2, allow_nan=False)


def _strict(obj):
    """Non-finite floats become the strings "inf", "-inf" and "nan" so the
    report stays valid JSON."""
    if isinstance(obj, dict):
        return {k: _strict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_strict(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def verify_all(env: Momdp, report_path=None, suites=None, settings: VerifySettings | None = None) -> VerificationReport:
    """Run the selected suites (all by default). Failures, including
    exceptions inside a suite, become report entries rather than errors."""
    s = settings or VerifySettings()
    entries = []
    for name in suites or SUITES:
        if name not in _RUNNERS:
            raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")
        try:
            entries.extend(_RUNNERS[name](env, s))
        except Exception as exc:
            log.exception("suite %s failed to run", name)
            entries.append(VerificationEntry(name, "error", float("nan"), float("nan"), False, {"error": repr(exc)}))
    report = VerificationReport(entries)
    if report_path is not None:
        Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")
    return report
