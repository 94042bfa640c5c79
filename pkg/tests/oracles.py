"""Independent reference computations used as test oracles.

Nothing here calls into the package's numerical routines: values come from
plain recursions, arbitrary precision arithmetic or brute force counting.
"""
import itertools

import mpmath
import numpy as np
from scipy.spatial import ConvexHull


def rollout_occupancy(kernel, p0, pi, gamma, horizon=200):
    """``(1 - gamma) sum_t gamma^t Pr(s_t, a_t)`` by forward propagation."""
    S, A = pi.shape
    dist = np.array(p0, dtype=float)
    mu = np.zeros((S, A))
    disc = 1.0
    for _ in range(horizon):
        sa = dist[:, None] * pi
        mu += (1 - gamma) * disc * sa
        nxt = np.zeros(S)
        for s in range(S):
            for a in range(A):
                nxt += sa[s, a] * kernel[a, s]
        dist = nxt
        disc *= gamma
    return mu


def value_recursion(kernel, rewards, p0, pi, gamma, tol=1e-15):
    """``J = p0 . V`` with ``V`` from iterating the policy Bellman equation."""
    S, A, m = rewards.shape
    V = np.zeros((S, m))
    while True:
        new = np.zeros((S, m))
        for s in range(S):
            for a in range(A):
                new[s] += pi[s, a] * (rewards[s, a] + gamma * kernel[a, s] @ V)
        if np.abs(new - V).max() < tol:
            return p0 @ new
        V = new


def stch_mp(f, omega, utopia, tau, dps=50):
    with mpmath.workdps(dps):
        terms = [mpmath.exp(mpmath.mpf(w) * (mpmath.mpf(i) - mpmath.mpf(x)) / mpmath.mpf(tau))
                 for x, w, i in zip(f, omega, utopia)]
        return float(-mpmath.mpf(tau) * mpmath.log(mpmath.fsum(terms)))


def hv_inclusion_exclusion(points, ref):
    """Union volume of the boxes ``[ref, p]`` by inclusion-exclusion."""
    P = [np.asarray(p, dtype=float) for p in points if np.all(np.asarray(p) > ref)]
    total = 0.0
    for r in range(1, len(P) + 1):
        for subset in itertools.combinations(P, r):
            corner = np.min(subset, axis=0)
            total += (-1) ** (r + 1) * float(np.prod(corner - ref))
    return total


def hv_lattice(points, ref, cells=400):
    """Midpoint-lattice count of the dominated region in 2D."""
    P = np.asarray(points, dtype=float)
    hi = P.max(axis=0)
    xs = ref[0] + (np.arange(cells) + 0.5) * (hi[0] - ref[0]) / cells
    ys = ref[1] + (np.arange(cells) + 0.5) * (hi[1] - ref[1]) / cells
    X, Y = np.meshgrid(xs, ys)
    covered = np.zeros_like(X, dtype=bool)
    for p in P:
        covered |= (X <= p[0]) & (Y <= p[1])
    return covered.mean() * float(np.prod(hi - ref))


def eum_double_loop(points, prefs):
    total = 0.0
    for w in prefs:
        best = -np.inf
        for p in points:
            best = max(best, sum(wi * pi for wi, pi in zip(w, p)))
        total += best
    return total / len(prefs)


def deterministic_J(kernel, rewards, p0, gamma):
    """Objective vectors of every deterministic policy via ``value_recursion``."""
    S, A, _ = rewards.shape
    out = []
    for choice in itertools.product(range(A), repeat=S):
        pi = np.zeros((S, A))
        pi[np.arange(S), choice] = 1.0
        out.append(value_recursion(kernel, rewards, p0, pi, gamma))
    return np.array(out)


def supported_vertices(points, tol=1e-9):
    """Pareto vertices on the upper-right hull, from scipy's convex hull.

    A hull vertex is kept when some strictly positive weight vector is
    maximized there, checked on a fine grid of weights.
    """
    P = np.unique(np.round(np.asarray(points, dtype=float), 12), axis=0)
    hull = ConvexHull(P)
    keep = []
    weights = [(t, 1 - t) for t in np.linspace(1e-6, 1 - 1e-6, 20001)]
    W = np.array(weights)
    scores = W @ P.T
    winners = set(np.argmax(scores, axis=1).tolist())
    for i in hull.vertices:
        if i in winners:
            keep.append(P[i])
    V = np.array(keep)
    return V[np.argsort(-V[:, 0])]
