"""Primal active-set method for small dense strictly convex QPs.

Solves

    min  1/2 z'Hz + g'z   s.t.  G z <= h

from a feasible starting point.  Used for the convex pieces of the
multiplier domain, where problems have at most a few dozen variables.
"""

import numpy as np

from .errors import Infeasible


def _solve_eqp(H, grad, Gw):
    """Step p and multipliers for min 1/2 p'Hp + grad'p s.t. Gw p = 0."""
    n = H.shape[0]
    k = Gw.shape[0]
    if k == 0:
        return np.linalg.solve(H, -grad), np.zeros(0)
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = H
    kkt[:n, n:] = Gw.T
    kkt[n:, :n] = Gw
    rhs = np.concatenate([-grad, np.zeros(k)])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    return sol[:n], sol[n:]


def solve_qp(H, g, G, h, z0, tol=1e-10, max_iter=None):
    """Return (z, active_set) minimizing the QP above.

    ``z0`` must satisfy ``G z0 <= h + tol``.  Ties in the ratio test and in
    multiplier dropping are broken by lowest constraint index, which keeps
    the iteration deterministic on degenerate vertices.
    """
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float).reshape(-1)
    G = np.asarray(G, dtype=float).reshape(h.size, H.shape[0])
    z = np.array(z0, dtype=float)
    if z.size == 0:
        return z, []
    if G.shape[0] and np.max(G @ z - h) > 1e3 * tol + 1e-9:
        raise Infeasible("starting point violates the constraints")
    if max_iter is None:
        max_iter = 50 * (G.shape[0] + H.shape[0]) + 50

    work = []
    slack = h - G @ z
    for i in np.flatnonzero(slack <= tol):
        cand = work + [i]
        if np.linalg.matrix_rank(G[cand]) == len(cand):
            work = cand

    for _ in range(max_iter):
        grad = H @ z + g
        p, lam = _solve_eqp(H, grad, G[work])
        scale = max(1.0, np.linalg.norm(z))
        if np.linalg.norm(p) <= tol * scale:
            if len(work) == 0:
                return z, []
            # KKT: grad + Gw' lam = 0 with lam >= 0 for inequality rows
            j = int(np.argmin(lam))
            if lam[j] >= -tol:
                return z, list(work)
            work.pop(j)
            continue
        Gp = G @ p
        alpha = 1.0
        block = None
        for i in range(G.shape[0]):
            if i in work or Gp[i] <= tol * np.linalg.norm(G[i]) * np.linalg.norm(p):
                continue
            step = (h[i] - G[i] @ z) / Gp[i]
            if step < alpha:
                alpha = max(step, 0.0)
                block = i
        z = z + alpha * p
        if block is not None:
            work.append(block)
    return z, list(work)
