"""Finite discounted MOMDPs and exact (linear-solve) policy evaluation.

Array conventions used throughout the package:

* ``kernel[a, s, s']`` is ``P(s' | s, a)``
* ``rewards[s, a, l]`` is the l-th reward component
* a policy is an ``(n_states, n_actions)`` row-stochastic array
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-12


class MomdpError(ValueError):
    """An environment or policy violates a structural invariant."""


@dataclass(frozen=True)
class Momdp:
    kernel: np.ndarray
    rewards: np.ndarray
    gamma: float
    p0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kernel", np.asarray(self.kernel, dtype=float))
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=float))
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.kernel.shape[1]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_objectives(self) -> int:
        return self.rewards.shape[2]

    @cached_property
    def kernel_sas(self) -> np.ndarray:
        """``P(s'|s,a)`` laid out as ``[s, a, s']``."""
        return np.ascontiguousarray(self.kernel.transpose(1, 0, 2))

    @cached_property
    def kernel_flat_t(self) -> np.ndarray:
        """``(S, S*A)`` matrix mapping a state function to its next-state expectation."""
        return np.ascontiguousarray(self.kernel_sas.reshape(-1, self.n_states).T)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_objectives": self.n_objectives,
            "gamma": self.gamma,
            "p0": self.p0.tolist(),
            "kernel": self.kernel.tolist(),
            "rewards": self.rewards.reshape(-1, self.n_objectives).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Momdp":
        try:
            n_s, n_a, m = int(data["n_states"]), int(data["n_actions"]), int(data["n_objectives"])
            kernel = np.asarray(data["kernel"], dtype=float)
            rewards = np.asarray(data["rewards"], dtype=float)
            p0 = np.asarray(data["p0"], dtype=float)
            gamma = float(data["gamma"])
        except (KeyError, TypeError, ValueError) as exc:
            raise MomdpError(f"malformed MOMDP document: {exc}") from exc
        if kernel.shape != (n_a, n_s, n_s):
            raise MomdpError(f"dimension mismatch: kernel shape {kernel.shape}, expected {(n_a, n_s, n_s)}")
        if rewards.shape != (n_s * n_a, m):
            raise MomdpError(f"dimension mismatch: rewards shape {rewards.shape}, expected {(n_s * n_a, m)}")
        env = cls(kernel=kernel, rewards=rewards.reshape(n_s, n_a, m), gamma=gamma, p0=p0)
        validate(env)
        return env


def load_momdp(path) -> Momdp:
    with open(path, encoding="utf-8") as fh:
        return Momdp.from_dict(json.load(fh))


def save_momdp(env: Momdp, path) -> None:
    Path(path).write_text(json.dumps(env.to_dict(), indent=2) + "\n", encoding="utf-8")


def validate(env: Momdp) -> None:
    """Raise :class:`MomdpError` describing the first violated invariant."""
    P, R, p0 = env.kernel, env.rewards, env.p0
    if P.ndim != 3 or P.shape[1] != P.shape[2]:
        raise MomdpError(f"dimension mismatch: kernel must be (A, S, S), got {P.shape}")
    n_a, n_s = P.shape[0], P.shape[1]
    if n_a < 1 or n_s < 1:
        raise MomdpError("dimension mismatch: need at least one state and one action")
    if R.ndim != 3 or R.shape[:2] != (n_s, n_a) or R.shape[2] < 1:
        raise MomdpError(f"dimension mismatch: rewards must be ({n_s}, {n_a}, m), got {R.shape}")
    if p0.shape != (n_s,):
        raise MomdpError(f"dimension mismatch: p0 must have length {n_s}, got {p0.shape}")
    if not 0.0 < env.gamma < 1.0:
        raise MomdpError(f"gamma must lie in (0, 1), got {env.gamma}")
    if not np.all(np.isfinite(P)) or np.any(P < 0):
        raise MomdpError("row not stochastic: kernel has negative or non-finite entries")
    row_err = np.abs(P.sum(axis=2) - 1.0)
    if row_err.max() > STOCHASTIC_TOL:
        a, s = np.unravel_index(np.argmax(row_err), row_err.shape)
        raise MomdpError(f"row not stochastic: P[a={a}] row {s} sums to {P[a, s].sum():.15g}")
    if not np.all(np.isfinite(R)):
        raise MomdpError("rewards must be finite")
    if not np.all(np.isfinite(p0)) or np.any(p0 < 0) or abs(p0.sum() - 1.0) > STOCHASTIC_TOL:
        raise MomdpError("p0 must be a probability vector")
    if np.any(p0 <= 0):
        raise MomdpError("p0 not full support")


def check_policy(env: Momdp, pi, full_support: bool = False) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (env.n_states, env.n_actions):
        raise MomdpError(f"dimension mismatch: policy shape {pi.shape}, expected {(env.n_states, env.n_actions)}")
    if np.any(pi < 0) or np.abs(pi.sum(axis=1) - 1.0).max() > STOCHASTIC_TOL:
        raise MomdpError("policy rows must be probability vectors")
    if full_support and np.any(pi <= 0):
        raise MomdpError("policy must have full support")
    return pi


def induced_kernel(env: Momdp, pi) -> np.ndarray:
    """State transition matrix ``P_pi(s, s') = sum_a pi(a|s) P(s'|s, a)``."""
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (env.n_states, env.n_actions):
        raise MomdpError(f"dimension mismatch: policy shape {pi.shape}")
    return np.einsum("sa,ast->st", pi, env.kernel)


def state_occupancy(env: Momdp, pi) -> np.ndarray:
    """Normalized discounted state occupancy, by a direct dense solve of
    ``(I - gamma P_pi^T) rho = (1 - gamma) p0``."""
    P_pi = induced_kernel(env, pi)
    A = np.identity(env.n_states) - env.gamma * P_pi.T
    return np.linalg.solve(A, (1.0 - env.gamma) * env.p0)


@dataclass(frozen=True)
class OccupancyMeasure:
    mu: np.ndarray
    rho: np.ndarray

    @classmethod
    def from_mu(cls, mu) -> "OccupancyMeasure":
        mu = np.asarray(mu, dtype=float)
        return cls(mu=mu, rho=mu.sum(axis=1))


def occupancy_measure(env: Momdp, pi) -> OccupancyMeasure:
    pi = np.asarray(pi, dtype=float)
    rho = state_occupancy(env, pi)
    return OccupancyMeasure(mu=rho[:, None] * pi, rho=rho)


def objective_vector(env: Momdp, pi, route: str = "occupancy") -> np.ndarray:
    """Exact vector return ``J(pi)``.

    ``route="occupancy"`` uses ``J = sum mu(s,a) r(s,a) / (1 - gamma)``;
    ``route="value"`` solves ``(I - gamma P_pi) V_l = r_l^pi`` per objective
    and averages over ``p0``. The two are independent computations of the
    same quantity.
    """
    pi = np.asarray(pi, dtype=float)
    if route == "occupancy":
        mu = occupancy_measure(env, pi).mu
        return np.einsum("sa,sal->l", mu, env.rewards) / (1.0 - env.gamma)
    if route == "value":
        r_pi = np.einsum("sa,sal->sl", pi, env.rewards)
        A = np.eye(env.n_states) - env.gamma * induced_kernel(env, pi)
        V = np.linalg.solve(A, r_pi)
        return env.p0 @ V
    raise ValueError(f"unknown route {route!r}")


def policy_from_occupancy(occ: OccupancyMeasure | np.ndarray) -> np.ndarray:
    mu = occ.mu if isinstance(occ, OccupancyMeasure) else np.asarray(occ, dtype=float)
    rho = mu.sum(axis=1)
    if np.any(rho <= 0):
        raise MomdpError("zero-marginal state: occupancy measure outside the relative interior")
    return mu / rho[:, None]


def enumerate_deterministic_policies(env: Momdp, cap: int = 10**6) -> list[np.ndarray]:
    """All ``n_actions ** n_states`` deterministic policies, in lexicographic
    order of their action tuples."""
    count = env.n_actions ** env.n_states
    if count > cap:
        raise MomdpError(f"enumeration cap exceeded: {count} deterministic policies > {cap}")
    eye = np.eye(env.n_actions)
    return [eye[list(actions)] for actions in itertools.product(range(env.n_actions), repeat=env.n_states)]


def max_attainable(env: Momdp, tol: float = 1e-13) -> np.ndarray:
    """Per-objective optimum ``max_pi J_l(pi)``, by value iteration on each
    reward component separately."""
    out = np.empty(env.n_objectives)
    for l in range(env.n_objectives):
        r = env.rewards[:, :, l]
        V = np.zeros(env.n_states)
        while True:
            V_new = (r + env.gamma * env.kernel_sas @ V).max(axis=1)
            done = np.abs(V_new - V).max() <= tol
            V = V_new
            if done:
                break
        out[l] = env.p0 @ V
    return out
