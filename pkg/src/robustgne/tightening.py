"""Constraint tightening driven by the multiplier ranking.

All rows except those holding the M largest multipliers are pulled inward
by c*rho.  The canonical representation is an ordering plus a 0/1 mask;
the permutation and selection matrices exist for checking against the
matrix form Q(mu, M) = P(mu)' R(M).
"""

from dataclasses import dataclass

import numpy as np

from .errors import EmptyAfterTightening, Infeasible, OutOfRange
from .geometry import Polytope, feasible_point

SORT_TOL = 1e-12


def permutation_of(mu, tol=SORT_TOL):
    """Indices of mu in decreasing order of value.

    Values within ``tol`` of their predecessor in the sorted list are
    treated as tied, and ties go to the smaller original index.
    """
    mu = np.asarray(mu, dtype=float).reshape(-1)
    order = np.argsort(-mu, kind="stable")
    if mu.size < 2:
        return order
    vals = mu[order]
    out = []
    start = 0
    for k in range(1, mu.size + 1):
        if k == mu.size or vals[k - 1] - vals[k] > tol:
            out.extend(sorted(order[start:k]))
            start = k
    return np.array(out, dtype=int)


def permutation_matrix(order):
    """P with (P mu)_k = mu[order[k]]."""
    m = len(order)
    P = np.zeros((m, m))
    P[np.arange(m), order] = 1.0
    return P


def selection_matrix(M, m):
    """R(M): zero except an identity block on the last m - M coordinates."""
    if not 0 <= M <= m:
        raise OutOfRange(f"need 0 <= M <= m, got M={M}, m={m}")
    R = np.zeros((m, m))
    R[M:, M:] = np.eye(m - M)
    return R


def tightening_mask(mu, M):
    """1 for rows to tighten, 0 for the rows with the M largest multipliers."""
    mu = np.asarray(mu, dtype=float).reshape(-1)
    m = mu.size
    if not 0 <= M <= m:
        raise OutOfRange(f"need 0 <= M <= m, got M={M}, m={m}")
    mask = np.ones(m, dtype=int)
    mask[permutation_of(mu)[:M]] = 0
    return mask


def tightening_vector(mu, M, c, rho):
    """Q(mu, M) applied to the constant vector c*rho*1."""
    if not rho > 0:
        raise OutOfRange("rho must be positive")
    return c * rho * tightening_mask(mu, M).astype(float)


def tightening_vector_matrix_form(mu, M, c, rho):
    """Same quantity assembled from the explicit matrices (for checking)."""
    mu = np.asarray(mu, dtype=float)
    P = permutation_matrix(permutation_of(mu))
    R = selection_matrix(M, mu.size)
    return P.T @ R @ (c * rho * np.ones(mu.size))


@dataclass(frozen=True, eq=False)
class TighteningPlan:
    m: int
    M: int
    c: float
    rho: float
    order: np.ndarray
    mask: np.ndarray

    @classmethod
    def from_multipliers(cls, mu, M, c, rho):
        mu = np.asarray(mu, dtype=float).reshape(-1)
        order = permutation_of(mu)
        return cls(mu.size, M, c, rho, order, tightening_mask(mu, M))

    @property
    def vector(self):
        return self.c * self.rho * self.mask.astype(float)

    @property
    def untightened(self):
        return np.flatnonzero(self.mask == 0)


def apply_tightening(P, t):
    """Polytope {x : A x <= b - t}; raises if it is empty."""
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.size != P.m:
        raise OutOfRange("tightening vector length differs from row count")
    Q = Polytope(P.A, P.b - t, P.row_normalized)
    if Q.m:
        try:
            feasible_point(Q)
        except Infeasible as exc:
            raise EmptyAfterTightening("tightened domain is empty") from exc
    return Q
