import json

import numpy as np
import pytest

from cmdpi import (
    Momdp,
    SolverConfig,
    SolveTrace,
    StchParams,
    capql_planning,
    cmdpi,
    mirror_descent_certificate,
    objective_vector,
    occupancy_measure,
    pareto_front_oracle,
    relative_smoothness_constant,
    soft_bellman_solve,
    solve_batch,
    utopia_from_momdp,
    value_iteration_linear,
)
from cmdpi.analysis import bregman_divergence, distance_to_front
from cmdpi.harness import random_momdp
from cmdpi.momdp import enumerate_deterministic_policies
from cmdpi.solvers import multiplicative_improvement, random_policy, soft_bellman_operator, uniform_policy

from oracles import deterministic_J, supported_vertices


@pytest.fixture(scope="module")
def front(toy):
    return pareto_front_oracle(toy)


@pytest.fixture(scope="module")
def params(toy):
    return StchParams(0.1, utopia_from_momdp(toy))


def oracle_vertices(env):
    return supported_vertices(deterministic_J(env.kernel, env.rewards, env.p0, env.gamma))


def test_vi_corner_preferences(toy):
    V = oracle_vertices(toy)
    _, J1 = value_iteration_linear(toy, [1.0, 0.0])
    _, J2 = value_iteration_linear(toy, [0.0, 1.0])
    assert np.allclose(J1, V[np.argmax(V[:, 0])], atol=1e-10)
    assert np.allclose(J2, V[np.argmax(V[:, 1])], atol=1e-10)


def test_vi_beats_every_deterministic_policy(toy):
    Js = deterministic_J(toy.kernel, toy.rewards, toy.p0, toy.gamma)
    for t in np.linspace(0, 1, 41):
        w = np.array([t, 1 - t])
        pi, J = value_iteration_linear(toy, w)
        assert np.all((pi == 0) | (pi == 1))
        assert w @ J >= (Js @ w).max() - 1e-8


def test_soft_bellman_without_lookahead(toy):
    env = Momdp(toy.kernel, toy.rewards, 1e-12, toy.p0)
    r = np.random.default_rng(0).normal(size=(4, 2))
    Q = soft_bellman_solve(env, r, uniform_policy(env), alpha=0.5)
    assert np.abs(Q - r).max() <= 1e-10


@pytest.mark.parametrize("method", ["sweep", "newton"])
def test_soft_bellman_constant_reward(toy, method):
    c = 1.7
    Q = soft_bellman_solve(toy, np.full((4, 2), c), uniform_policy(toy), alpha=0.3, method=method)
    assert np.allclose(Q, c / (1 - toy.gamma), atol=1e-9)


def test_soft_bellman_methods_agree():
    for seed in range(10):
        env = random_momdp(5, 3, 1, seed, gamma=0.95)
        rng = np.random.default_rng(seed)
        r = rng.normal(size=(5, 3))
        ref = random_policy(env, seed + 100)
        alpha = rng.uniform(0.05, 5)
        a = soft_bellman_solve(env, r, ref, alpha, tol=1e-12, method="sweep")
        b = soft_bellman_solve(env, r, ref, alpha, tol=1e-12, method="newton")
        assert np.abs(a - b).max() <= 1e-10
        assert np.abs(soft_bellman_operator(env, r, ref, alpha, b) - b).max() <= 1e-12


def test_soft_bellman_contracts_geometrically():
    rng = np.random.default_rng(7)
    for seed in range(20):
        env = random_momdp(4, 3, 1, seed, gamma=0.9)
        r = rng.normal(size=(4, 3))
        ref = random_policy(env, seed)
        Q = rng.normal(scale=10, size=(4, 3))
        res0 = np.abs(soft_bellman_operator(env, r, ref, 0.7, Q) - Q).max()
        for n in range(1, 8):
            Q = soft_bellman_operator(env, r, ref, 0.7, Q)
            res = np.abs(soft_bellman_operator(env, r, ref, 0.7, Q) - Q).max()
            assert res <= env.gamma**n * res0 * (1 + 1e-9)


def test_soft_bellman_rejects_bad_input(toy):
    with pytest.raises(ValueError):
        soft_bellman_solve(toy, np.zeros((4, 2)), uniform_policy(toy), alpha=0.0)
    pi = uniform_policy(toy)
    pi[0] = (1.0, 0.0)
    with pytest.raises(ValueError):
        soft_bellman_solve(toy, np.zeros((4, 2)), pi, alpha=1.0)


def test_improvement_constant_q(toy):
    ref = random_policy(toy, 3)
    Q = np.repeat(np.arange(4.0)[:, None] * 5, 2, axis=1)
    assert np.abs(multiplicative_improvement(ref, Q, 0.01) - ref).max() <= 1e-12


def test_improvement_huge_alpha(toy):
    ref = random_policy(toy, 4)
    Q = np.random.default_rng(0).normal(size=(4, 2))
    assert np.abs(multiplicative_improvement(ref, Q, 1e12) - ref).max() <= 1e-6


def test_improvement_three_to_one():
    alpha = 0.4
    new = multiplicative_improvement(np.array([[0.5, 0.5]]), np.array([[alpha * np.log(3), 0.0]]), alpha)
    assert np.allclose(new, [[0.75, 0.25]], atol=1e-15)


@pytest.mark.parametrize("w1", [0.1, 0.3, 0.5, 0.9])
def test_cmdpi_reaches_front_in_500_steps(toy, front, params, w1):
    trace = cmdpi(toy, [w1, 1 - w1], params, SolverConfig(max_outer_iters=500))
    assert distance_to_front(front, trace.J) <= 1e-3


@pytest.mark.xfail(strict=True, reason="on the front's steep middle facet 500 steps at alpha=10 leave ~1.5e-3")
def test_cmdpi_500_steps_middle_facet(toy, front, params):
    trace = cmdpi(toy, [0.7, 0.3], params, SolverConfig(max_outer_iters=500))
    assert distance_to_front(front, trace.J) <= 1e-3


def test_cmdpi_middle_facet_with_default_budget(toy, front, params):
    trace = cmdpi(toy, [0.7, 0.3], params, SolverConfig(max_outer_iters=2000))
    assert distance_to_front(front, trace.J) <= 1e-6


def test_cmdpi_independent_of_init(toy, params):
    cfg = SolverConfig(max_outer_iters=20000, outer_tol=1e-11)
    a = cmdpi(toy, [0.4, 0.6], params, cfg, random_policy(toy, 1))
    b = cmdpi(toy, [0.4, 0.6], params, cfg, random_policy(toy, 2))
    assert np.abs(a.J - b.J).max() <= 1e-5


def test_cmdpi_single_objective_matches_vi(toy):
    env = Momdp(toy.kernel, toy.rewards[:, :, 1:], toy.gamma, toy.p0)
    p = StchParams(0.1, utopia_from_momdp(env))
    trace = cmdpi(env, [1.0], p, SolverConfig(max_outer_iters=5000, outer_tol=1e-13))
    _, J = value_iteration_linear(env, [1.0])
    assert trace.utility == pytest.approx(J[0] - p.utopia[0], abs=1e-6)


def test_cmdpi_trace_is_monotone_and_feasible(toy, params):
    trace = cmdpi(toy, [0.5, 0.5], params, SolverConfig(max_outer_iters=300))
    u = trace.utilities()
    assert np.all(np.diff(u) >= -1e-10)
    for rec in trace.records[::50]:
        assert np.allclose(rec.policy.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(rec.J, objective_vector(toy, rec.policy), atol=1e-12)
    assert trace.records[0].k == 0 and trace.records[0].bellman_residual == 0.0


def test_cmdpi_deterministic(toy, params):
    cfg = SolverConfig(max_outer_iters=100)
    a = cmdpi(toy, [0.3, 0.7], params, cfg)
    b = cmdpi(toy, [0.3, 0.7], params, cfg)
    assert a.to_json() == b.to_json()


def test_batch_matches_single_runs(toy, params):
    cfg = SolverConfig(max_outer_iters=200)
    omegas = [[0.2, 0.8], [0.5, 0.5], [0.9, 0.1]]
    inits = [random_policy(toy, s) for s in range(3)]
    batch = solve_batch(toy, omegas, params, cfg, inits)
    for w, pi0, tr in zip(omegas, inits, batch):
        single = cmdpi(toy, w, params, cfg, pi0)
        assert np.abs(single.J - tr.J).max() <= 1e-12
        assert single.iterations == tr.iterations


def test_capql_bias_shrinks_with_alpha(toy, front, params):
    w = [0.5, 0.5]
    small = capql_planning(toy, w, params, SolverConfig(alpha=0.1, max_outer_iters=2000))
    large = capql_planning(toy, w, params, SolverConfig(alpha=10.0, max_outer_iters=2000))
    assert distance_to_front(front, small.J) < distance_to_front(front, large.J)


def test_capql_linear_small_alpha_recovers_vertex(toy, params):
    w = [0.5, 0.5]
    trace = capql_planning(toy, w, params, SolverConfig(alpha=1e-4, max_outer_iters=2000), utility="linear")
    _, J = value_iteration_linear(toy, w)
    assert np.linalg.norm(trace.J - J) <= 1e-3


def test_capql_indifferent_env_gives_uniform(toy):
    kernel = np.stack([toy.kernel[1], toy.kernel[1]])
    rewards = np.repeat(toy.rewards[:, :1, :], 2, axis=1)
    env = Momdp(kernel, rewards, toy.gamma, toy.p0)
    p = StchParams(0.1, utopia_from_momdp(env))
    trace = capql_planning(env, [0.5, 0.5], p, SolverConfig(max_outer_iters=20))
    assert np.abs(trace.policy - 0.5).max() <= 1e-12


def test_random_policy_contract(toy):
    assert np.array_equal(random_policy(toy, 11), random_policy(toy, 11))
    one = Momdp(np.ones((2, 1, 1)), np.zeros((1, 2, 1)), 0.5, np.ones(1))
    samples = np.array([random_policy(one, s)[0, 0] for s in range(10_000)])
    assert abs(samples.mean() - 0.5) <= 0.02
    assert samples.min() > 0


def test_certificate_on_converged_trace(toy, params):
    trace = cmdpi(toy, [0.5, 0.5], params, SolverConfig(max_outer_iters=3000, outer_tol=1e-12))
    u_star = trace.utilities().max()
    cert = mirror_descent_certificate(trace, u_star, L_rel=1.0, D0=1.0, slack=np.inf)
    assert np.all(cert.gap >= -1e-9)


def test_certificate_theoretical_step(toy, params):
    w = np.array([0.5, 0.5])
    L_rel = relative_smoothness_constant(toy, w, params.tau)
    alpha = L_rel * (1 - toy.gamma)
    pi0 = random_policy(toy, 0)
    trace = cmdpi(toy, w, params, SolverConfig(alpha=alpha, max_outer_iters=100, outer_tol=1e-300), pi0)
    oracle = cmdpi(toy, w, params, SolverConfig(alpha=alpha, max_outer_iters=1000, outer_tol=1e-300), pi0)
    best = int(np.argmax(oracle.utilities()))
    D0 = bregman_divergence(occupancy_measure(toy, oracle.records[best].policy), occupancy_measure(toy, pi0))
    cert = mirror_descent_certificate(trace, oracle.utilities()[best], L_rel, D0)
    assert cert.ok and cert.violations == []
    assert cert.k[0] == 1 and cert.bound[0] == L_rel * D0


def test_certificate_rejects_inconsistent_oracle(toy, params):
    trace = cmdpi(toy, [0.5, 0.5], params, SolverConfig(max_outer_iters=50))
    with pytest.raises(ValueError):
        mirror_descent_certificate(trace, trace.utilities().max() - 1.0, 1.0, 1.0)


def test_trace_serialization_round_trip(toy, params):
    trace = cmdpi(toy, [0.5, 0.5], params, SolverConfig(max_outer_iters=20))
    back = SolveTrace.from_dict(json.loads(trace.to_json()))
    assert back.to_json() == trace.to_json()
    lines = trace.to_csv().splitlines()
    assert lines[0] == "k,utility,J_1,J_2,bellman_residual,policy_delta"
    assert len(lines) == len(trace.records) + 1


def test_deterministic_policies_on_oracle_front(toy, front):
    on_front = [objective_vector(toy, pi) for pi in enumerate_deterministic_policies(toy)
                if distance_to_front(front, objective_vector(toy, pi)) <= 1e-12]
    assert len(on_front) >= len(front.vertices)
