"""Smooth Tchebycheff and linear utilities, utopia points, preference grids
and the theoretical constants attached to the STCH utility."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np

from .momdp import Momdp, max_attainable

SIMPLEX_TOL = 1e-12


@dataclass(frozen=True)
class Preference:
    omega: np.ndarray
    delta: float = 0.0

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "omega", omega)
        if omega.ndim != 1 or omega.size < 1:
            raise ValueError("preference must be a non-empty vector")
        if abs(omega.sum() - 1.0) > SIMPLEX_TOL:
            raise ValueError(f"preference must sum to 1, got {omega.sum():.17g}")
        if np.any(omega < self.delta - SIMPLEX_TOL):
            raise ValueError(f"preference entries must be >= delta={self.delta}")

    @property
    def interior(self) -> bool:
        return bool(np.all(self.omega > 0))


@dataclass(frozen=True)
class StchParams:
    tau: float
    utopia: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "utopia", np.asarray(self.utopia, dtype=float))
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


def weights(omega) -> np.ndarray:
    """Accept a :class:`Preference` or a plain vector."""
    if isinstance(omega, Preference):
        return omega.omega
    return np.asarray(omega, dtype=float)


def _scaled_gaps(f, omega, params: StchParams) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    w = weights(omega)
    if not f.shape == w.shape == params.utopia.shape:
        raise ValueError(f"dimension mismatch: f {f.shape}, omega {w.shape}, utopia {params.utopia.shape}")
    return w * (params.utopia - f) / params.tau


def stch_utility(f, omega, params: StchParams) -> float:
    """``u(f, w) = -tau * log sum_k exp(w_k (I_k - f_k) / tau)`` (max-shifted)."""
    z = _scaled_gaps(f, omega, params)
    zmax = z.max()
    return float(-params.tau * (zmax + math.log(np.exp(z - zmax).sum())))


def stch_gradient(f, omega, params: StchParams) -> np.ndarray:
    z = _scaled_gaps(f, omega, params)
    e = np.exp(z - z.max())
    return weights(omega) * e / e.sum()


def linear_utility(f, omega) -> float:
    f = np.asarray(f, dtype=float)
    w = weights(omega)
    if f.shape != w.shape:
        raise ValueError(f"dimension mismatch: f {f.shape}, omega {w.shape}")
    return float(w @ f)


def utopia_from_momdp(env: Momdp) -> np.ndarray:
    """``I_l = max_{s,a} |r_l(s,a)| / (1 - gamma)``.

    Strict dominance of the achievable set is only guaranteed for
    sign-constrained rewards; see :func:`utopia_dominates`.
    """
    return np.abs(env.rewards).max(axis=(0, 1)) / (1.0 - env.gamma)


def utopia_dominates(env: Momdp, utopia) -> bool:
    """True when ``utopia`` strictly exceeds the best attainable value of every objective."""
    return bool(np.all(np.asarray(utopia, dtype=float) > max_attainable(env)))


@dataclass(frozen=True)
class ConstantsReport:
    lipschitz_L: float
    alpha_star: float
    alphas: list
    betas: list
    U: float
    mu_strong: float
    delta: float
    tau: float
    rel_smooth_L: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def lipschitz_constant(bounds, utopia, delta: float, tau: float, env: Momdp | None = None,
                       omega=None) -> ConstantsReport:
    """Lipschitz constant ``L = U / mu`` of the map ``omega -> J^omega`` on the
    delta-floored simplex.

    ``bounds`` is an ``(m, 2)`` array of per-objective ``[min, max]`` over the
    attainable set (or any compact convex set holding the optimizers). When
    ``env`` and ``omega`` are given the report also carries the relative
    smoothness constant of the utility at that preference.
    """
    bounds = np.asarray(bounds, dtype=float)
    utopia = np.asarray(utopia, dtype=float)
    if bounds.shape != (utopia.size, 2):
        raise ValueError(f"bounds must be ({utopia.size}, 2), got {bounds.shape}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    alphas = utopia - bounds[:, 1]
    betas = utopia - bounds[:, 0]
    if np.any(alphas <= 0):
        raise ValueError(f"utopia must strictly dominate the attainable set (alpha_i <= 0: {alphas.tolist()})")
    alpha_star = float(alphas.min())
    try:
        mu_strong = (delta / tau) ** 2 * math.exp(delta * alpha_star / tau)
    except OverflowError:
        mu_strong = math.inf
    with np.errstate(over="ignore"):  # an infinite bound is a valid (vacuous) answer
        U = float(np.max((1.0 / tau) * (1.0 + betas / tau) * np.exp(betas / tau)))
    return ConstantsReport(
        lipschitz_L=U / mu_strong,
        alpha_star=alpha_star,
        alphas=alphas.tolist(),
        betas=betas.tolist(),
        U=U,
        mu_strong=mu_strong,
        delta=delta,
        tau=tau,
        rel_smooth_L=None if env is None or omega is None else relative_smoothness_constant(env, omega, tau),
    )


def relative_smoothness_constant(env: Momdp, omega, tau: float) -> float:
    """``L_rel = w_max^2 R_1max^2 / (4 tau (1 - gamma)^4)``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    r1max = float(np.abs(env.rewards).sum(axis=2).max())
    wmax = float(weights(omega).max())
    return wmax**2 * r1max**2 / (4.0 * tau * (1.0 - env.gamma) ** 4)


def preference_grid(n: int, m: int = 2, delta: float = 0.0) -> list[Preference]:
    """Deterministic equally spaced preferences on the simplex.

    For ``m = 2`` point ``i`` is ``(i/(n-1), 1 - i/(n-1))``. For larger ``m``
    the simplex lattice of step ``1/(n-1)`` is listed in lexicographic order.
    A positive ``delta`` maps each point affinely onto the floored simplex,
    ``w -> delta + (1 - m delta) w``, which keeps the spacing uniform.
    """
    if n < 2:
        raise ValueError("need at least 2 preferences")
    if m < 1:
        raise ValueError("need at least one objective")
    if delta < 0 or m * delta > 1.0 + SIMPLEX_TOL:
        raise ValueError(f"infeasible delta={delta} for m={m}")
    steps = n - 1
    if m == 1:
        raw = [np.array([1.0])]
    elif m == 2:
        raw = [np.array([i / steps, 1.0 - i / steps]) for i in range(n)]
    else:
        raw = []
        for head in itertools.product(range(steps + 1), repeat=m - 1):
            if sum(head) <= steps:
                counts = np.array([*head, steps - sum(head)], dtype=float)
                raw.append(counts / steps)
    if delta == 0:
        return [Preference(w) for w in raw]
    scale = 1.0 - m * delta
    return [Preference((delta + scale * w) / (delta + scale * w).sum(), delta=delta) for w in raw]
