"""Planning algorithms on a known MOMDP.

* :func:`value_iteration_linear` -- linear-scalarization baseline
* :func:`soft_bellman_solve` / :func:`multiplicative_improvement` -- the two
  halves of one KL-regularized policy-iteration step
* :func:`cmdpi` -- mirror descent on the occupancy polytope, run in policy space
* :func:`capql_planning` -- the same loop with the reference frozen to uniform
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .momdp import Momdp, MomdpError, check_policy, objective_vector
from .scalarization import StchParams, linear_utility, stch_gradient, stch_utility, weights


@dataclass(frozen=True)
class SolverConfig:
    alpha: float | None = None  # None -> 1 / tau
    max_outer_iters: int = 2000
    inner_tol: float = 1e-10
    inner_max_iters: int = 100_000
    outer_tol: float = 1e-9
    rng_seed: int = 0
    inner_method: str = "newton"
    warm_start: bool = False

    def __post_init__(self):
        if self.alpha is not None and not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not (self.inner_tol > 0 and self.outer_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be non-negative")
        if self.inner_method not in ("sweep", "newton"):
            raise ValueError(f"unknown inner_method {self.inner_method!r}")

    def resolved_alpha(self, tau: float) -> float:
        return self.alpha if self.alpha is not None else 1.0 / tau


@dataclass
class IterRecord:
    k: int
    policy: np.ndarray
    J: np.ndarray
    utility: float
    bellman_residual: float
    policy_delta: float

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "policy": self.policy.tolist(),
            "J": self.J.tolist(),
            "utility": self.utility,
            "bellman_residual": self.bellman_residual,
            "policy_delta": self.policy_delta,
        }


@dataclass
class SolveTrace:
    """Record ``k`` holds iterate ``pi_k`` together with the residual of the
    inner solve and the sup-norm policy change that produced it (both 0 at
    ``k = 0``)."""

    method: str
    omega: np.ndarray
    records: list[IterRecord] = field(default_factory=list)
    termination: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def policy(self) -> np.ndarray:
        return self.records[-1].policy

    @property
    def J(self) -> np.ndarray:
        return self.records[-1].J

    @property
    def utility(self) -> float:
        return self.records[-1].utility

    @property
    def iterations(self) -> int:
        return self.records[-1].k

    def utilities(self) -> np.ndarray:
        return np.array([r.utility for r in self.records])

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "omega": self.omega.tolist(),
            "termination": self.termination,
            "meta": self.meta,
            "final": {"J": self.J.tolist(), "utility": self.utility, "iterations": self.iterations},
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "SolveTrace":
        records = [
            IterRecord(
                k=r["k"],
                policy=np.asarray(r["policy"], dtype=float),
                J=np.asarray(r["J"], dtype=float),
                utility=r["utility"],
                bellman_residual=r["bellman_residual"],
                policy_delta=r["policy_delta"],
            )
            for r in data["records"]
        ]
        return cls(
            method=data["method"],
            omega=np.asarray(data["omega"], dtype=float),
            records=records,
            termination=data["termination"],
            meta=data.get("meta", {}),
        )

    def to_csv(self) -> str:
        m = self.omega.size
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "utility", *[f"J_{i + 1}" for i in range(m)], "bellman_residual", "policy_delta"])
        for r in self.records:
            writer.writerow(
                [r.k, format(r.utility, ".17g"), *[format(x, ".17g") for x in r.J],
                 format(r.bellman_residual, ".17g"), format(r.policy_delta, ".17g")]
            )
        return buf.getvalue()


def _lse(z: np.ndarray) -> np.ndarray:
    """Max-shifted log-sum-exp over the last axis."""
    zmax = z.max(axis=-1)
    return zmax + np.log(np.exp(z - zmax[..., None]).sum(axis=-1))


def _expect_next(env: Momdp, values: np.ndarray) -> np.ndarray:
    """``E[values(s') | s, a]`` for a batch ``(B, S)`` of state functions -> ``(B, S, A)``."""
    return (values @ env.kernel_flat_t).reshape(values.shape[0], env.n_states, env.n_actions)


def _objectives(env: Momdp, pi: np.ndarray) -> np.ndarray:
    """Exact ``J`` for a batch of policies ``(B, S, A)`` via the occupancy solve."""
    P_pi = np.einsum("bsa,sat->bst", pi, env.kernel_sas)
    A = np.identity(env.n_states) - env.gamma * P_pi.transpose(0, 2, 1)
    rhs = np.broadcast_to((1.0 - env.gamma) * env.p0, (pi.shape[0], env.n_states))
    rho = np.linalg.solve(A, rhs[..., None])[..., 0]
    return np.einsum("bs,bsa,sal->bl", rho, pi, env.rewards) / (1.0 - env.gamma)


def value_iteration_linear(env: Momdp, omega, tol: float = 1e-10, max_iters: int = 1_000_000):
    """Greedy policy of standard value iteration on ``<omega, r(s,a)>``.

    Stops once ``||V_{n+1} - V_n||_inf <= tol (1 - gamma) / (2 gamma)``, which
    makes the greedy policy ``tol``-optimal. Ties go to the lowest action index.
    Returns ``(policy, J)`` with ``J`` evaluated exactly.
    """
    w = weights(omega)
    if w.size != env.n_objectives:
        raise ValueError(f"dimension mismatch: omega has {w.size} entries, MOMDP has {env.n_objectives} objectives")
    r = env.rewards @ w
    P = env.kernel_sas
    g = env.gamma
    threshold = tol * (1.0 - g) / (2.0 * g)
    V = np.zeros(env.n_states)
    for _ in range(max_iters):
        V_new = (r + g * P @ V).max(axis=1)
        done = np.abs(V_new - V).max() <= threshold
        V = V_new
        if done:
            break
    greedy = np.argmax(r + g * P @ V, axis=1)
    pi = np.eye(env.n_actions)[greedy]
    return pi, objective_vector(env, pi)


def soft_bellman_operator(env: Momdp, reward, pi_ref, alpha: float, Q) -> np.ndarray:
    """``(TQ)(s,a) = r(s,a) + gamma E_{s'}[alpha log sum_b pi_ref(b|s') exp(Q(s',b)/alpha)]``."""
    with np.errstate(divide="ignore"):
        log_ref = np.log(np.asarray(pi_ref, dtype=float))
    chi = alpha * _lse(np.asarray(Q, dtype=float) / alpha + log_ref)
    return np.asarray(reward, dtype=float) + env.gamma * _expect_next(env, chi[None])[0]


def soft_bellman_solve(
    env: Momdp,
    reward,
    pi_ref,
    alpha: float,
    tol: float = 1e-10,
    max_iters: int = 100_000,
    method: str = "sweep",
    Q0=None,
) -> np.ndarray:
    """Fixed point of :func:`soft_bellman_operator`, to sup-norm residual ``tol``.

    ``method="sweep"`` iterates the operator (a gamma-contraction) from
    ``Q0`` (zeros by default). ``method="newton"`` runs soft policy
    iteration, i.e. Newton's method on the same fixed-point equation, and
    finishes with operator sweeps until the residual test passes; it reaches
    the same unique fixed point in far fewer steps.
    """
    pi_ref = check_policy(env, pi_ref, full_support=True)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    reward = np.asarray(reward, dtype=float)
    if reward.shape != (env.n_states, env.n_actions):
        raise MomdpError(f"dimension mismatch: reward shape {reward.shape}")
    if method not in ("sweep", "newton"):
        raise ValueError(f"unknown method {method!r}")
    Q0 = None if Q0 is None else np.asarray(Q0, dtype=float)[None]
    return _soft_fixed_point(env, reward[None], np.log(pi_ref)[None], alpha, tol, max_iters, method, Q0)[0]


def _soft_fixed_point(env, reward, log_ref, alpha, tol, max_iters, method, Q0=None):
    """Batched solve; each problem is iterated only until its own test passes,
    so the result for one problem does not depend on the rest of the batch."""
    g = env.gamma
    Q = np.zeros_like(reward) if Q0 is None else np.array(Q0, dtype=float)
    active = np.arange(reward.shape[0])

    if method == "newton":
        eye = np.identity(env.n_states)
        for _ in range(50):
            z = Q[active] / alpha + log_ref[active]
            lse = _lse(z)
            TQ = reward[active] + g * _expect_next(env, alpha * lse)
            done = np.abs(TQ - Q[active]).max(axis=(1, 2)) <= tol
            Q[active[done]] = TQ[done]
            keep = ~done
            active, z, lse = active[keep], z[keep], lse[keep]
            if active.size == 0:
                return Q
            # evaluate the softmax policy of Q exactly in the regularized MDP
            log_pi = z - lse[..., None]
            pi = np.exp(log_pi)
            # 0 log 0 = 0 where the reference has underflowed
            kl_terms = np.where(pi > 0, log_pi - log_ref[active], 0.0)
            r_pi = (pi * (reward[active] - alpha * kl_terms)).sum(axis=2)
            P_pi = np.einsum("bsa,sat->bst", pi, env.kernel_sas)
            V = np.linalg.solve(eye - g * P_pi, r_pi[..., None])[..., 0]
            Q_next = reward[active] + g * _expect_next(env, V)
            finite = np.all(np.isfinite(Q_next), axis=(1, 2))
            Q[active[finite]] = Q_next[finite]

    for _ in range(max_iters):
        if active.size == 0:
            return Q
        TQ = reward[active] + g * _expect_next(env, alpha * _lse(Q[active] / alpha + log_ref[active]))
        res = np.abs(TQ - Q[active]).max(axis=(1, 2))
        Q[active] = TQ
        # ||T(TQ) - TQ|| <= gamma ||TQ - Q||
        active = active[res * g > tol]
    if active.size == 0:
        return Q
    raise RuntimeError(f"soft Bellman iteration did not reach tol={tol} in {max_iters} sweeps")


def multiplicative_improvement(pi_ref, Q, alpha: float) -> np.ndarray:
    """``pi_new(a|s) ∝ pi_ref(a|s) exp(Q(s,a) / alpha)``, normalized per state."""
    with np.errstate(divide="ignore"):
        log_ref = np.log(np.asarray(pi_ref, dtype=float))
    return _improve(log_ref, np.asarray(Q, dtype=float), alpha)


def _improve(log_ref, Q, alpha):
    logits = log_ref + Q / alpha
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def random_policy(env: Momdp, seed: int) -> np.ndarray:
    """Independent uniform (Dirichlet(1, ..., 1)) rows, one per state."""
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(env.n_actions), size=env.n_states)


def uniform_policy(env: Momdp) -> np.ndarray:
    return np.full((env.n_states, env.n_actions), 1.0 / env.n_actions)


def _stch_batch(J, W, params):
    z = W * (params.utopia - J) / params.tau
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    utility = -params.tau * (zmax[:, 0] + np.log(e.sum(axis=1)))
    return utility, W * e / e.sum(axis=1, keepdims=True)


def solve_batch(
    env: Momdp,
    omegas,
    params: StchParams,
    cfg: SolverConfig | None = None,
    pi0s=None,
    *,
    method: str = "cmdpi",
    utility: str = "stch",
    history: bool = True,
) -> list[SolveTrace]:
    """Run independent CMDPI (``method="cmdpi"``) or CAPQL (``"capql"``)
    problems side by side, one per entry of ``omegas``.

    The outer loop is vectorized over problems; each stops on its own
    ``outer_tol`` test, and its iterates are unaffected by the others.
    ``history=False`` keeps only the first and last records of each trace.
    """
    cfg = cfg or SolverConfig()
    if method not in ("cmdpi", "capql"):
        raise ValueError(f"unknown method {method!r}")
    if utility not in ("stch", "linear"):
        raise ValueError(f"unknown utility {utility!r}")
    W = np.array([weights(w) for w in omegas], dtype=float)
    if W.ndim != 2 or W.shape[1] != env.n_objectives:
        raise ValueError(f"dimension mismatch: preferences must have {env.n_objectives} entries")
    if params.utopia.shape != (env.n_objectives,):
        raise ValueError(f"dimension mismatch: utopia has shape {params.utopia.shape}")
    B = W.shape[0]
    if pi0s is None:
        pi0s = [random_policy(env, cfg.rng_seed)] * B
    if len(pi0s) != B:
        raise ValueError("need one initial policy per preference")
    pi = np.array([check_policy(env, p, full_support=True) for p in pi0s])
    alpha = cfg.resolved_alpha(params.tau)
    frozen = method == "capql"
    log_uniform = np.broadcast_to(np.log(uniform_policy(env)), pi.shape)

    def evaluate(J, Wb):
        if utility == "stch":
            return _stch_batch(J, Wb, params)
        return (Wb * J).sum(axis=1), Wb

    J = _objectives(env, pi)
    util, grad = evaluate(J, W)
    meta = {"alpha": alpha, "tau": params.tau, "utopia": params.utopia.tolist(), "utility": utility}
    traces = [SolveTrace(method=method, omega=W[b].copy(), meta=dict(meta)) for b in range(B)]
    for b in range(B):
        traces[b].records.append(IterRecord(0, pi[b].copy(), J[b].copy(), float(util[b]), 0.0, 0.0))
    last = [None] * B

    active = np.arange(B)
    Q = np.zeros_like(pi)
    for k in range(cfg.max_outer_iters):
        if active.size == 0:
            break
        r_k = np.einsum("sal,bl->bsa", env.rewards, grad[active])
        if frozen:
            log_ref = log_uniform[active]
        else:
            with np.errstate(divide="ignore"):
                log_ref = np.log(pi[active])
        Q_a = _soft_fixed_point(
            env, r_k, log_ref, alpha, cfg.inner_tol, cfg.inner_max_iters,
            cfg.inner_method, Q[active] if cfg.warm_start else None,
        )
        Q[active] = Q_a
        TQ = r_k + env.gamma * _expect_next(env, alpha * _lse(Q_a / alpha + log_ref))
        residual = np.abs(TQ - Q_a).max(axis=(1, 2))
        pi_next = _improve(log_ref, Q_a, alpha)
        J_next = _objectives(env, pi_next)
        util_next, grad_next = evaluate(J_next, W[active])
        delta = np.abs(pi_next - pi[active]).max(axis=(1, 2))
        step = np.abs(J_next - J[active]).max(axis=1)
        for i, b in enumerate(active):
            rec = IterRecord(k + 1, pi_next[i].copy(), J_next[i].copy(), float(util_next[i]),
                             float(residual[i]), float(delta[i]))
            if history:
                traces[b].records.append(rec)
            else:
                last[b] = rec
        pi[active], J[active], grad[active] = pi_next, J_next, grad_next
        done = step <= cfg.outer_tol
        for b in active[done]:
            traces[b].termination = "converged"
        active = active[~done]
    for b in range(B):
        if not traces[b].termination:
            traces[b].termination = "max_iters"
        if last[b] is not None:
            traces[b].records.append(last[b])
    return traces


def cmdpi(env: Momdp, omega, params: StchParams, cfg: SolverConfig | None = None, pi0=None) -> SolveTrace:
    """Concave mirror descent policy iteration for ``max_pi u(J(pi), omega)``.

    Each outer step linearizes the STCH utility at ``J(pi_k)``, solves the
    soft Bellman equation for the scalar reward ``<g_k, r>`` with reference
    ``pi_k`` and applies the multiplicative update. ``pi0`` defaults to a
    random policy drawn from ``cfg.rng_seed``.
    """
    pi0s = None if pi0 is None else [pi0]
    return solve_batch(env, [omega], params, cfg, pi0s, method="cmdpi")[0]


def capql_planning(
    env: Momdp,
    omega,
    params: StchParams,
    cfg: SolverConfig | None = None,
    pi0=None,
    utility: str = "stch",
) -> SolveTrace:
    """Tabular CAPQL reduction: the CMDPI loop with a uniform reference policy
    in both the soft evaluation and the improvement step, which amounts to
    entropy regularization of strength ``alpha``. ``utility="linear"`` uses
    the fixed weights ``omega`` instead of the STCH gradient."""
    pi0s = None if pi0 is None else [pi0]
    return solve_batch(env, [omega], params, cfg, pi0s, method="capql", utility=utility)[0]


@dataclass
class CertificateReport:
    k: np.ndarray
    gap: np.ndarray
    bound: np.ndarray
    violations: list[int]
    slack: float

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_excess(self) -> float:
        return float(np.max(self.gap - self.bound)) if self.k.size else -math.inf

    def to_dict(self) -> dict:
        return {
            "k": self.k.tolist(),
            "gap": self.gap.tolist(),
            "bound": self.bound.tolist(),
            "violations": self.violations,
            "slack": self.slack,
            "ok": self.ok,
        }


def mirror_descent_certificate(
    trace: SolveTrace, u_star: float, L_rel: float, D0: float, slack: float = 1e-7, oracle_tol: float = 1e-9
) -> CertificateReport:
    """Check ``u* - u(J(pi_k)) <= (L_rel / k) D0`` for every ``k >= 1`` in ``trace``."""
    utilities = trace.utilities()
    if u_star < utilities.max() - oracle_tol:
        raise ValueError(f"u_star={u_star!r} is below the trace maximum {utilities.max()!r}; oracle is inconsistent")
    k = np.array([r.k for r in trace.records[1:]], dtype=int)
    gap = u_star - utilities[1:]
    bound = L_rel * D0 / k
    violations = [int(kk) for kk, gg, bb in zip(k, gap, bound) if gg > bb + slack]
    return CertificateReport(k=k, gap=gap, bound=bound, violations=violations, slack=slack)


def with_alpha(cfg: SolverConfig, alpha: float) -> SolverConfig:
    return replace(cfg, alpha=alpha)
