import math
import sys
import warnings
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

sys.path.insert(0, str(Path(__file__).parent))
from oracles import box_vi_kkt, in_multiplier_domain  # noqa: E402

from robustgne.errors import DegenerateInput, NotPositiveDefinite  # noqa: E402
from robustgne.game import NE, WE, aggregate_game, evaluate_F, quadratic_game  # noqa: E402
from robustgne.geometry import Polytope, feasible_point, normalize_rows  # noqa: E402
from robustgne.qp import solve_qp  # noqa: E402
from robustgne.scenario import UncertaintyModel, BAND, draw_multisample, reduce_to_aggregate  # noqa: E402
from robustgne.solver import (  # noqa: E402
    IterateState,
    MultiplierDomain,
    SolverConfig,
    D_build,
    T_eval,
    complementarity_violations,
    estimate_R_bar,
    primal_dual_step,
    project_skewed,
    run,
    tau_bound_global,
    tau_bound_subdomain,
    tau_dual_term,
    tau_primal_term,
)
from robustgne.tightening import tightening_vector  # noqa: E402

C = np.array([[1.0, 0.1], [0.1, 1.5]])
d = np.array([-4.0, -4.0])


def example_domain(seed, K=50):
    g = quadratic_game(50, 2, C, d, 0, 3.5, WE)
    S = draw_multisample(UncertaintyModel(BAND, seed=seed, N=50, n=2, lower_nominal=0.0,
                                          upper_nominal=1.0, spread=0.2), K)
    return g, aggregate_game(g), reduce_to_aggregate(g.lower, g.upper, S)


# -- multiplier domain --------------------------------------------------------

def test_membership():
    md = MultiplierDomain(3, 0.2)
    assert md.contains([0, 0, 0])
    assert md.contains([0.2, 0, 0])
    assert md.contains([0.6, 0.4, 0.2])
    assert md.contains([0.3, 0.0, 0.5])
    assert not md.contains([0.1, 0, 0])
    assert not md.contains([0.5, 0.4, 0])
    assert not md.contains([-0.1, 0, 0])


def test_piece_count():
    assert len(MultiplierDomain(3, 0.2).pieces()) == 1 + 3 + 6 + 6
    assert len(MultiplierDomain(4, 0.2).pieces()) == sum(
        math.factorial(4) // math.factorial(4 - s) for s in range(5))


def test_one_dimensional_projection():
    md = MultiplierDomain(1, 0.2)
    assert md.project([0.05])[0] == 0.0
    assert md.project([0.15])[0] == 0.2
    assert md.project([0.7])[0] == 0.7
    assert md.project([-3.0])[0] == 0.0


@given(st.lists(st.floats(-1, 3, allow_nan=False), min_size=1, max_size=5))
def test_pruned_projection_matches_exhaustive(p):
    md = MultiplierDomain(len(p), 0.2)
    a = md.project(p)
    b = md.project(p, exhaustive=True)
    da, db = np.sum((a - p) ** 2), np.sum((b - p) ** 2)
    assert md.contains(a)
    assert da <= db + 1e-12


@given(st.lists(st.floats(-1, 3, allow_nan=False), min_size=1, max_size=4))
def test_projection_is_idempotent_and_in_domain(p):
    md = MultiplierDomain(len(p), 0.25)
    a = md.project(p)
    assert in_multiplier_domain(a[None], 0.25)[0]
    assert np.allclose(md.project(a), a)


@given(st.integers(0, 10_000))
def test_general_metric_projection_beats_samples(seed):
    rng = np.random.default_rng(seed)
    md = MultiplierDomain(3, 0.2)
    B = rng.normal(size=(3, 3))
    W = B @ B.T + 0.2 * np.eye(3)
    p = rng.uniform(-0.5, 2.0, 3)
    a = md.project(p, metric=W)
    va = (a - p) @ W @ (a - p)
    # random members of the domain never do better
    pts = rng.uniform(0, 3, size=(4000, 3))
    pts[rng.random(pts.shape) < 0.3] = 0.0
    pts = pts[in_multiplier_domain(pts, 0.2)]
    D = pts - p
    assert va <= np.einsum("ij,jk,ik->i", D, W, D).min() + 1e-9


def test_skewed_projection_with_primal_block_matches_qp():
    rng = np.random.default_rng(4)
    md = MultiplierDomain(2, 0.2)
    lo, hi = np.zeros(2), np.ones(2)
    B = rng.normal(size=(4, 4))
    W = B @ B.T + 0.5 * np.eye(4)
    for _ in range(10):
        p = rng.uniform(-0.5, 1.5, 4)
        x, mu = project_skewed(p, lo, hi, md, W)
        y = np.concatenate([x, mu])
        assert np.all(x >= -1e-12) and np.all(x <= 1 + 1e-12) and md.contains(mu)
        # fix the multiplier piece and re-solve as a plain box QP over x
        H = 2 * W[:2, :2]
        g = -2 * W[:2, :2] @ p[:2] + 2 * W[:2, 2:] @ (mu - p[2:])
        G = np.vstack([np.eye(2), -np.eye(2)])
        xq, _ = solve_qp(H, g, G, np.concatenate([hi, -lo]), np.full(2, 0.5))
        assert np.allclose(x, xq, atol=1e-8)
        assert (y - p) @ W @ (y - p) <= (np.r_[xq, md.project(p[2:])] - p) @ W @ (np.r_[xq, md.project(p[2:])] - p) + 1e-9


# -- operator pieces -----------------------------------------------------------

def test_T_eval_examples():
    A, b = np.eye(2), np.zeros(2)
    top, bot = T_eval(np.zeros(2), np.zeros(2), np.zeros(2), A, b, 0, 1.0, 0.5)
    assert np.allclose(top, 0) and np.allclose(bot, [-0.5, -0.5])
    x = np.array([-0.3, -0.1])
    _, bot = T_eval(x, np.zeros(2), np.zeros(2), A, b, 2, 1.0, 0.5)
    assert np.all(bot > 0)


@given(st.integers(0, 10_000))
def test_T_eval_matches_direct_assembly(seed):
    rng = np.random.default_rng(seed)
    m, nx = 4, 3
    A = rng.normal(size=(m, nx))
    b = rng.normal(size=m)
    x, F = rng.normal(size=(2, nx))
    mu = rng.uniform(0, 2, m)
    M, c, rho = int(rng.integers(0, m + 1)), 1.3, 0.7
    top, bot = T_eval(x, mu, F, A, b, M, c, rho)
    order = sorted(range(m), key=lambda i: (-mu[i], i))
    q = np.full(m, c * rho)
    q[order[:M]] = 0.0
    assert np.allclose(top, F + A.T @ mu, atol=1e-12)
    assert np.allclose(bot, -(A @ x - b + q), atol=1e-12)


def test_D_build_schur_test():
    D, Ds = D_build(0.5, np.eye(2))
    assert np.linalg.eigvalsh(Ds).min() > 0
    assert np.allclose(D[2:, :2], -2 * np.eye(2)) and np.allclose(D[:2, 2:], 0)
    D0, _ = D_build(3.0, np.zeros((2, 2)))
    assert np.allclose(D0, np.eye(4) / 3.0)
    with pytest.raises(NotPositiveDefinite):
        D_build(1.5, np.eye(2))


@given(st.floats(0.01, 3.0), st.integers(0, 1000))
def test_D_build_agrees_with_eigenvalues(tau, seed):
    A = np.random.default_rng(seed).normal(size=(3, 2))
    pd = np.linalg.eigvalsh(np.block([[np.eye(2) / tau, -A.T], [-A, np.eye(3) / tau]])).min() > 0
    if tau * np.linalg.norm(A, 2) < 1 - 1e-9:
        D_build(tau, A)
        assert pd
    elif tau * np.linalg.norm(A, 2) > 1 + 1e-9:
        assert not pd
        with pytest.raises(NotPositiveDefinite):
            D_build(tau, A)


def test_step_bounds_hand_values():
    assert abs(tau_primal_term(1.0, 1.0, 1.0) - (math.sqrt(5) - 1) / 2) < 1e-12
    assert abs(tau_dual_term(1.0, 0.1, 1.0) - (-2 + math.sqrt(4.16)) / 0.4) < 1e-12
    assert abs(tau_bound_global(1.0, 1.0, 0.2) - (-2 + math.sqrt(4.4)) / 2) < 1e-12
    assert tau_bound_subdomain(1, 1, 1, 1, 0.1) == tau_dual_term(1.0, 0.1, 1.0)
    with pytest.warns(RuntimeWarning):
        assert tau_bound_subdomain(1, 1, 0.0, 1, 0.1) == math.inf
    with pytest.raises(DegenerateInput):
        tau_bound_global(0.0, 1.0, 0.2)


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.01, 10),
       st.floats(0.001, 1))
def test_step_bounds_positive(L, a, nA, rho, zeta):
    assert tau_bound_subdomain(max(L, a), a, nA, rho, zeta) > 0
    assert tau_bound_global(nA, rho, zeta) > 0


def test_global_bound_monotone_in_zeta_and_vanishes():
    zs = np.linspace(1e-6, 2, 200)
    vals = [tau_bound_global(3.0, 1.5, z) for z in zs]
    assert np.all(np.diff(vals) > 0)
    assert tau_bound_global(3.0, 1.5, 1e-12) < 1e-12


def test_R_bar_vertex_estimate_dominates_random_points():
    _, ga, dom = example_domain(0)
    cp = dom.coupling()
    md = MultiplierDomain(cp.m, 0.05, cap=10.0)
    R, mode = estimate_R_bar(ga, cp.A, cp.b, md)
    assert mode == "vertex"
    rng = np.random.default_rng(0)
    for _ in range(200):
        x = rng.uniform(0, 3.5, 2)
        mu = md.project(rng.uniform(0, 10, cp.m))
        r1 = np.linalg.norm(2 * cp.A @ (evaluate_F(ga, x) + cp.A.T @ mu))
        assert max(r1, np.linalg.norm(cp.A @ x - cp.b)) <= R + 1e-9


# -- iteration -----------------------------------------------------------------

def test_no_coupling_reduces_to_projected_gradient():
    ga = aggregate_game(quadratic_game(50, 2, C, d, 0, 1.2, WE))
    res = run(ga, Polytope(np.zeros((0, 2)), np.zeros(0)), SolverConfig(rho=0.2, M=0))
    # minimizer of 1/2 s'Cs + d's over the box, from the QP oracle
    G = np.vstack([np.eye(2), -np.eye(2)])
    ref, _ = solve_qp(C, d, G, np.r_[1.2, 1.2, 0, 0], np.zeros(2))
    assert res.converged and np.allclose(res.x, ref, atol=1e-6)


def test_untightened_solve_matches_potential_qp():
    _, ga, dom = example_domain(3)
    cp = dom.coupling()
    res = run(ga, cp, SolverConfig(rho=0.2, M=cp.m, norm_order=1))
    P = dom.polytope
    ref, _ = solve_qp(C, d, P.A, P.b, feasible_point(P))
    assert res.converged and np.linalg.norm(res.x - ref) <= 1e-6


def test_two_agent_nash_matches_kkt_enumeration():
    Cn = np.array([[2.0]])
    g = quadratic_game(2, 1, Cn, [-3.0], 0.0, 2.0, NE)
    A = normalize_rows(np.array([[1.0, 1.0], [1.0, -0.5]]), np.array([1.5, 0.4]))
    res = run(g, A, SolverConfig(rho=0.05, M=2, tau=0.2, tau_mode="explicit", xi=1e-12))
    J = np.array([[Cn[0, 0] / 2 + Cn[0, 0] / 2, Cn[0, 0] / 2],
                  [Cn[0, 0] / 2, Cn[0, 0] / 2 + Cn[0, 0] / 2]])
    G = np.vstack([A.A, np.eye(2), -np.eye(2)])
    h = np.r_[A.b, 2.0, 2.0, 0.0, 0.0]
    sols = box_vi_kkt(J, np.array([-3.0, -3.0]), G, h)
    assert len(sols) >= 1
    assert min(np.linalg.norm(res.x - s) for s in sols) <= 1e-6


@pytest.mark.parametrize("M", [0, 1, 2])
def test_iterates_stay_feasible_and_fixed_point_certificate(M):
    _, ga, dom = example_domain(1)
    cp = dom.coupling()
    cfg = SolverConfig(rho=0.2, M=M, norm_order=1)
    res = run(ga, cp, cfg, trace=True)
    md = MultiplierDomain(cp.m, cfg.zeta)
    for _, x, mu, _, _ in res.trace:
        assert np.all(x >= -1e-9) and np.all(x <= 3.5 + 1e-9)
        assert md.contains(mu, 1e-9)
    assert res.converged and res.residual <= cfg.xi
    assert res.fixed_point_residual <= 10 * cfg.xi
    D_build(res.tau, cp.A)
    assert complementarity_violations(res, cp, M, max(10 * cfg.xi, 1e-6)) == []


def test_asymmetric_step_solves_the_linearized_subproblem():
    # y+ must satisfy T(y) + D(y+ - y) in -N(y+) on the piece containing mu+
    _, ga, dom = example_domain(2)
    cp = dom.coupling()
    tau, M, c, rho = 0.3, 1, 1.0, 0.2
    md = MultiplierDomain(cp.m, 0.05)
    rng = np.random.default_rng(0)
    D, _ = D_build(tau, cp.A)
    for _ in range(20):
        x = rng.uniform(0, 3.5, 2)
        mu = md.project(rng.uniform(0, 3, cp.m))
        xn, mun = primal_dual_step(x, mu, ga, cp.A, cp.b, tau, M, c, rho, md)
        Tx, Tmu = T_eval(x, mu, evaluate_F(ga, x), cp.A, cp.b, M, c, rho)
        r = np.r_[Tx, Tmu] + D @ np.r_[xn - x, mun - mu]
        # variational check against random points of X x (piece of mu+)
        order = [i for i in np.argsort(-mun, kind="stable") if mun[i] > 0]
        for _ in range(50):
            xs = rng.uniform(0, 3.5, 2)
            s = len(order)
            vals = np.sort(rng.uniform(0, 3, s))[::-1] + 0.05 * np.arange(s, 0, -1)
            ms = np.zeros(cp.m)
            ms[order] = np.maximum.accumulate(vals[::-1])[::-1] if s else []
            for k in range(s - 2, -1, -1):
                ms[order[k]] = max(ms[order[k]], ms[order[k + 1]] + 0.05)
            assert r @ (np.r_[xs, ms] - np.r_[xn, mun]) >= -1e-9


def test_T_is_monotone_on_random_pairs():
    rng = np.random.default_rng(7)
    g = quadratic_game(3, 2, C, d, -1, 1, NE)
    A = normalize_rows(rng.normal(size=(4, 6)), rng.uniform(0.5, 1, 4))
    md = MultiplierDomain(4, 0.1)
    for _ in range(10_000):
        x, xp = rng.uniform(-1, 1, (2, 6))
        mu, mup = md.project(rng.uniform(0, 2, 4)), md.project(rng.uniform(0, 2, 4))
        M = int(rng.integers(0, 5))
        T1 = np.concatenate(T_eval(x, mu, evaluate_F(g, x), A.A, A.b, M, 1.0, 0.3))
        T2 = np.concatenate(T_eval(xp, mup, evaluate_F(g, xp), A.A, A.b, M, 1.0, 0.3))
        assert (T1 - T2) @ np.r_[x - xp, mu - mup] >= -1e-10


def test_max_iter_returns_unconverged_best_iterate():
    _, ga, dom = example_domain(0)
    res = run(ga, dom.coupling(), SolverConfig(rho=0.2, M=1, max_iter=5))
    assert not res.converged and res.iterations == 5


def test_explicit_tau_violating_schur_test_raises():
    _, ga, dom = example_domain(0)
    with pytest.raises(NotPositiveDefinite, match="positive definite"):
        run(ga, dom.coupling(), SolverConfig(rho=0.2, M=1, tau=1.0, tau_mode="explicit"))


def test_global_bound_tau_cannot_activate_multipliers():
    # tau * R_bar < zeta / 2 under the global bound, so from mu = 0 no dual
    # step reaches the first nonzero piece; the solver must say so
    ga = aggregate_game(quadratic_game(50, 1, [[1.0]], [-2.0], 0, 2, WE))
    P = normalize_rows(np.array([[1.0]]), np.array([1.0]))
    with pytest.warns(RuntimeWarning, match="cannot cross the gap"):
        res = run(ga, P, SolverConfig(rho=0.1, M=0, zeta=0.05, tau_mode="from-bounds", cap=20.0))
    info = res.tau_info
    assert res.tau <= 0.9 * info["global_bound"] + 1e-15
    assert res.tau * info["R_bar"] < 0.05 / 2
    assert not res.converged and res.gap_trapped == (0,)


def test_subdomain_tau_crosses_the_gap():
    ga = aggregate_game(quadratic_game(50, 1, [[1.0]], [-2.0], 0, 2, WE))
    P = normalize_rows(np.array([[1.0]]), np.array([1.0]))
    res = run(ga, P, SolverConfig(rho=0.1, M=0, zeta=0.05))
    assert res.converged and res.gap_trapped == ()
    # x <= 1 - c*rho with c = 1 in one dimension
    assert abs(res.x[0] - 0.9) < 1e-6 and abs(res.mu[0] - 1.1) < 1e-6


def test_warm_start_is_projected():
    _, ga, dom = example_domain(0)
    cp = dom.coupling()
    y0 = IterateState(np.array([9.0, -1.0]), np.full(cp.m, 0.01))
    res = run(ga, cp, SolverConfig(rho=0.2, M=1), y0=y0)
    assert res.converged


def test_cap_warning():
    ga = aggregate_game(quadratic_game(1, 1, [[1.0]], [-50.0], 0, 100, WE))
    P = normalize_rows(np.array([[1.0]]), np.array([0.0]))
    with pytest.warns(RuntimeWarning, match="cap"):
        run(ga, P, SolverConfig(rho=0.1, M=1, cap=1.0, max_iter=2000))
