"""Occupancy geometry (weighted KL, Bregman divergence), Pareto-front oracles
and front-quality metrics (HV, EUM, SP)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import xlogy

from .momdp import Momdp, MomdpError, OccupancyMeasure, enumerate_deterministic_policies, objective_vector, occupancy_measure
from .scalarization import weights

DOMINANCE_TOL = 1e-12


def occupancy_weighted_kl(env: Momdp, pi, pi0) -> float:
    """``sum_{s,a} mu_pi(s,a) log(pi(a|s) / pi0(a|s))`` with ``0 log 0 = 0``."""
    pi = np.asarray(pi, dtype=float)
    pi0 = np.asarray(pi0, dtype=float)
    if np.any(pi0 <= 0):
        raise MomdpError("reference policy must have full support")
    mu = occupancy_measure(env, pi).mu
    log_ratio = np.where(pi > 0, np.log(np.where(pi > 0, pi, 1.0)) - np.log(pi0), 0.0)
    return float((mu * log_ratio).sum())


def conditional_entropy_potential(mu) -> float:
    """Negative conditional entropy ``sum mu log(mu / rho_mu)``."""
    mu = np.asarray(mu, dtype=float)
    rho = mu.sum(axis=1, keepdims=True)
    return float(xlogy(mu, mu).sum() - xlogy(rho, rho).sum())


def bregman_divergence(mu: OccupancyMeasure, mu0: OccupancyMeasure) -> float:
    """Bregman divergence of the conditional-entropy potential, straight from
    its definition ``psi(mu) - psi(mu0) - <grad psi(mu0), mu - mu0>`` with
    ``grad psi(mu0)(s,a) = log(mu0(s,a) / rho0(s))``."""
    m = mu.mu if isinstance(mu, OccupancyMeasure) else np.asarray(mu, dtype=float)
    m0 = mu0.mu if isinstance(mu0, OccupancyMeasure) else np.asarray(mu0, dtype=float)
    if m.shape != m0.shape:
        raise MomdpError(f"dimension mismatch: {m.shape} vs {m0.shape}")
    if np.any(m0 <= 0):
        raise MomdpError("second argument must lie in the interior (strictly positive)")
    grad0 = np.log(m0) - np.log(m0.sum(axis=1, keepdims=True))
    return conditional_entropy_potential(m) - conditional_entropy_potential(m0) - float((grad0 * (m - m0)).sum())


def nondominated(points, tol: float = DOMINANCE_TOL) -> np.ndarray:
    """Boolean mask of points not dominated by any other point (maximization).
    Exact duplicates are all kept."""
    P = np.asarray(points, dtype=float)
    n = P.shape[0]
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        ge = np.all(P >= P[i] - tol, axis=1)
        gt = np.any(P > P[i] + tol, axis=1)
        if np.any(ge & gt):
            keep[i] = False
    return keep


@dataclass(frozen=True)
class ParetoFront2D:
    vertices: np.ndarray  # (n, 2), J_1 descending

    def to_csv(self) -> str:
        lines = ["J1,J2"] + [f"{x:.17g},{y:.17g}" for x, y in self.vertices]
        return "\n".join(lines) + "\n"


def pareto_front_oracle(env: Momdp, cap: int = 10**6) -> ParetoFront2D:
    """Supported Pareto vertices of the achievable set, by enumerating every
    deterministic policy, evaluating it exactly and keeping the
    non-dominated points on the upper-right convex hull."""
    if env.n_objectives != 2:
        raise ValueError("front tracing is only supported for two objectives")
    Js = np.array([objective_vector(env, pi) for pi in enumerate_deterministic_policies(env, cap)])
    return front_from_points(Js)


def front_from_points(points, tol: float = DOMINANCE_TOL) -> ParetoFront2D:
    P = np.asarray(points, dtype=float)
    P = P[nondominated(P, tol)]
    # merge near-duplicates, then walk in increasing J_1 (hence decreasing J_2)
    P = P[np.lexsort((-P[:, 1], P[:, 0]))]
    uniq = [P[0]]
    for p in P[1:]:
        if np.abs(p - uniq[-1]).max() > tol:
            uniq.append(p)
    hull: list[np.ndarray] = []
    for p in uniq:
        # drop the middle point unless the chain turns strictly clockwise
        while len(hull) >= 2:
            o, a = hull[-2], hull[-1]
            cross = (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0])
            if cross >= -tol:
                hull.pop()
            else:
                break
        hull.append(p)
    return ParetoFront2D(vertices=np.array(hull[::-1]))


def distance_to_front(front: ParetoFront2D, point) -> float:
    V = np.asarray(front.vertices, dtype=float)
    if V.size == 0:
        raise ValueError("empty front")
    p = np.asarray(point, dtype=float)
    best = float(np.min(np.linalg.norm(V - p, axis=1)))
    for a, b in zip(V[:-1], V[1:]):
        d = b - a
        t = np.clip(np.dot(p - a, d) / np.dot(d, d), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * d))))
    return best


def hypervolume(points, reference) -> float:
    """Dominated hypervolume of ``points`` relative to ``reference`` (maximization).

    Points that do not strictly dominate the reference contribute nothing and
    are dropped. Exact for ``m <= 4``: a sort-sweep in 2D and slicing along
    the last objective above that.
    """
    ref = np.asarray(reference, dtype=float)
    P = np.asarray(points, dtype=float).reshape(-1, ref.size)
    m = ref.size
    if m > 4:
        raise ValueError(f"hypervolume supports at most 4 objectives, got {m}")
    P = P[np.all(P > ref, axis=1)]
    if P.shape[0] == 0:
        return 0.0
    return float(_hv(P - ref))


def _hv(P: np.ndarray) -> float:
    # P is shifted so the reference is the origin and all entries are > 0
    m = P.shape[1]
    if m == 1:
        return float(P.max())
    if m == 2:
        P = P[np.argsort(-P[:, 0], kind="stable")]
        total, y_best = 0.0, 0.0
        for x, y in P:
            if y > y_best:
                total += x * (y - y_best)
                y_best = y
        return total
    P = P[np.argsort(-P[:, -1], kind="stable")]
    levels = P[:, -1]
    total = 0.0
    for i in range(P.shape[0]):
        lower = levels[i + 1] if i + 1 < P.shape[0] else 0.0
        height = levels[i] - lower
        if height > 0:
            total += height * _hv(P[: i + 1, :-1])
    return total


def expected_utility_metric(points, prefs) -> float:
    """Mean over preferences of the best linear utility attained by the set."""
    P = np.asarray(points, dtype=float)
    if P.size == 0 or len(prefs) == 0:
        raise ValueError("points and preferences must be non-empty")
    W = np.array([weights(w) for w in prefs], dtype=float)
    return float((W @ P.T).max(axis=1).mean())


def sparsity(points, nondominated_only: bool = False) -> float:
    """``(1/(n-1)) sum_j sum_i (P_j(i) - P_j(i+1))^2`` over each objective
    sorted independently; 0 for fewer than two points."""
    P = np.asarray(points, dtype=float)
    if P.size == 0:
        raise ValueError("empty point set")
    if P.ndim == 1:
        P = P[None]
    if nondominated_only:
        P = P[nondominated(P)]
    n = P.shape[0]
    if n < 2:
        return 0.0
    S = np.sort(P, axis=0)
    return float((np.diff(S, axis=0) ** 2).sum() / (n - 1))


@dataclass
class MetricReport:
    hypervolume: float
    eum: float
    sparsity: float
    reference_point: list
    preference_set_id: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def metric_report(points, reference, prefs, preference_set_id: str) -> MetricReport:
    return MetricReport(
        hypervolume=hypervolume(points, reference),
        eum=expected_utility_metric(points, prefs),
        sparsity=sparsity(points),
        reference_point=np.asarray(reference, dtype=float).tolist(),
        preference_set_id=preference_set_id,
    )


@dataclass
class LipschitzReport:
    max_ratio: float
    L_theory: float
    argmax_pair: tuple
    n_pairs: int

    @property
    def ok(self) -> bool:
        return self.max_ratio <= self.L_theory

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d


def adjacent_pairs(omegas, rel_tol: float = 1e-6) -> list[tuple[int, int]]:
    """Pairs of grid points at the minimal positive spacing; depends only on
    the point set, not on its ordering."""
    W = np.asarray(omegas, dtype=float)
    D = np.linalg.norm(W[:, None, :] - W[None, :, :], axis=2)
    iu = np.triu_indices(W.shape[0], k=1)
    pos = D[iu][D[iu] > 0]
    if pos.size == 0:
        return []
    h = pos.min()
    return [(int(i), int(j)) for i, j in zip(*iu) if 0 < D[i, j] <= h * (1.0 + rel_tol)]


def lipschitz_empirical(sweep, L_theory: float) -> LipschitzReport:
    """Largest ``||J^w - J^w'|| / ||w - w'||`` over adjacent grid preferences.

    ``sweep`` is a sequence of ``(preference, J)`` pairs.
    """
    if len(sweep) < 2:
        raise ValueError("need at least two sweep points")
    W = np.array([weights(w) for w, _ in sweep], dtype=float)
    J = np.array([np.asarray(j, dtype=float) for _, j in sweep])
    best, arg = 0.0, None
    pairs = adjacent_pairs(W)
    for i, j in pairs:
        ratio = float(np.linalg.norm(J[i] - J[j]) / np.linalg.norm(W[i] - W[j]))
        if arg is None or ratio > best:
            best, arg = ratio, (tuple(W[i].tolist()), tuple(W[j].tolist()))
    return LipschitzReport(max_ratio=best, L_theory=float(L_theory), argmax_pair=arg, n_pairs=len(pairs))
