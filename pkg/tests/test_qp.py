import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from robustgne.errors import Infeasible
from robustgne.qp import solve_qp


def kkt_enumeration(H, g, G, h):
    """Brute-force oracle: try every active set, keep the KKT point."""
    n, m = H.shape[0], G.shape[0]
    best, best_val = None, np.inf
    for k in range(min(n, m) + 1):
        for act in itertools.combinations(range(m), k):
            act = list(act)
            kkt = np.zeros((n + k, n + k))
            kkt[:n, :n] = H
            kkt[:n, n:] = G[act].T
            kkt[n:, :n] = G[act]
            rhs = np.concatenate([-g, h[act]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            z, lam = sol[:n], sol[n:]
            if np.all(G @ z <= h + 1e-9) and np.all(lam >= -1e-9):
                val = 0.5 * z @ H @ z + g @ z
                if val < best_val:
                    best, best_val = z, val
    return best


def test_unconstrained_minimum_inside_box():
    H = np.diag([2.0, 4.0])
    g = np.array([-2.0, -4.0])
    G = np.vstack([np.eye(2), -np.eye(2)])
    h = np.array([5.0, 5.0, 5.0, 5.0])
    z, act = solve_qp(H, g, G, h, np.zeros(2))
    assert np.allclose(z, [1.0, 1.0])
    assert act == []


def test_projection_onto_halfspace():
    z, act = solve_qp(2 * np.eye(2), -2 * np.array([2.0, 2.0]), np.array([[1.0, 1.0]]),
                      np.array([1.0]), np.zeros(2))
    assert np.allclose(z, [0.5, 0.5])
    assert act == [0]


def test_infeasible_start_rejected():
    with pytest.raises(Infeasible):
        solve_qp(np.eye(1), np.zeros(1), np.array([[1.0]]), np.array([0.0]), np.array([1.0]))


@given(st.integers(0, 10_000))
def test_matches_kkt_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 5
    B = rng.normal(size=(n, n))
    H = B @ B.T + 0.5 * np.eye(n)
    g = rng.normal(size=n) * 3
    G = rng.normal(size=(m, n))
    h = rng.uniform(0.1, 1.0, size=m)  # origin strictly feasible
    z, _ = solve_qp(H, g, G, h, np.zeros(n))
    ref = kkt_enumeration(H, g, G, h)
    assert np.allclose(z, ref, atol=1e-8)
