"""Polytopes in H-representation and norm balls.

The feasible domain of a scenario game is a polytope {x : A x <= b}; the
region of admissible deviations is its intersection with a norm ball around
the equilibrium.  Everything here is immutable and LP-backed.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog, minimize

from .qp import solve_qp

from .errors import (
    CenterOutside,
    DimensionMismatch,
    Infeasible,
    Unbounded,
    ZeroRow,
)

TOL = 1e-9
ZERO_ROW_TOL = 1e-14
# 1-norm / inf-norm balls are expanded into explicit facets only up to this
# dimension (2**d facets); above it the LP uses a lifted formulation.
MAX_EXPLICIT_BALL_DIM = 10


@dataclass(frozen=True, eq=False)
class Polytope:
    """The set {x : A x <= b}."""

    A: np.ndarray
    b: np.ndarray
    row_normalized: bool = False

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.ndim == 1:
            A = A.reshape(len(b), -1) if len(b) else A.reshape(0, A.size)
        if A.shape[0] != b.shape[0]:
            raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.shape[0]}")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def m(self):
        return self.A.shape[0]

    @classmethod
    def from_box(cls, lower, upper):
        lower = np.asarray(lower, dtype=float).reshape(-1)
        upper = np.asarray(upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape:
            raise DimensionMismatch("box bounds differ in length")
        d = lower.size
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]), np.concatenate([upper, -lower]), True)

    @classmethod
    def whole_space(cls, d):
        return cls(np.zeros((0, d)), np.zeros(0), True)

    def contains(self, x, tol=TOL):
        x = np.asarray(x, dtype=float)
        if self.m == 0:
            return True
        return bool(np.all(self.A @ x <= self.b + tol))

    def slack(self, x):
        return self.b - self.A @ np.asarray(x, dtype=float)

    def stack(self, other):
        if other.dim != self.dim:
            raise DimensionMismatch("cannot stack polytopes of different dimension")
        return Polytope(
            np.vstack([self.A, other.A]),
            np.concatenate([self.b, other.b]),
            self.row_normalized and other.row_normalized,
        )

    def select(self, rows):
        rows = np.asarray(rows, dtype=int)
        return Polytope(self.A[rows], self.b[rows], self.row_normalized)

    def with_offsets(self, b):
        return Polytope(self.A, b, self.row_normalized)

    def is_empty(self):
        try:
            feasible_point(self)
        except Infeasible:
            return True
        return False


def normalize_rows(A, b):
    """Scale every row of (A, b) so that the rows of A have unit 2-norm."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float).reshape(-1)
    if A.ndim == 1:
        A = A.reshape(len(b), -1)
    if A.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"A has {A.shape[0]} rows but b has {b.shape[0]}")
    norms = np.linalg.norm(A, axis=1)
    bad = np.flatnonzero(norms < ZERO_ROW_TOL)
    if bad.size:
        raise ZeroRow(int(bad[0]))
    return Polytope(A / norms[:, None], b / norms, True)


@dataclass(frozen=True, eq=False)
class NormBall:
    """Ball {y : ||y - center||_p <= radius} for p in {1, 2, inf}."""

    center: np.ndarray
    radius: float
    norm_order: float = 2

    def __post_init__(self):
        c = np.array(self.center, dtype=float).reshape(-1)
        c.setflags(write=False)
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")
        p = self.norm_order
        if p in ("inf", "Inf", math.inf):
            p = math.inf
        if p not in (1, 2, math.inf):
            raise ValueError(f"unsupported norm order {self.norm_order!r}")
        object.__setattr__(self, "norm_order", p)

    @property
    def dim(self):
        return self.center.size

    @property
    def circumscribing_factor(self):
        """Radius ratio of the smallest 2-norm sphere containing the ball."""
        return 1.0 if self.norm_order <= 2 else math.sqrt(self.dim)

    def contains(self, x, tol=TOL):
        dist = np.linalg.norm(np.asarray(x, dtype=float) - self.center, ord=self.norm_order)
        return bool(dist <= self.radius + tol)

    def support(self, direction):
        """max of direction'y over the ball."""
        direction = np.asarray(direction, dtype=float)
        dual = {1: math.inf, 2: 2, math.inf: 1}[self.norm_order]
        return float(direction @ self.center + self.radius * np.linalg.norm(direction, ord=dual))

    def as_polytope(self):
        """Exact half-space form; only for 1- and inf-norm balls."""
        d, r, c = self.dim, self.radius, self.center
        if self.norm_order == math.inf:
            return Polytope.from_box(c - r, c + r)
        if self.norm_order == 1:
            if d > MAX_EXPLICIT_BALL_DIM:
                raise ValueError(f"1-norm ball in {d} dimensions has 2**{d} facets")
            signs = np.array(list(itertools.product((1.0, -1.0), repeat=d)))
            return Polytope(signs, signs @ c + r)
        raise ValueError("a 2-norm ball has no polytopic representation")


@dataclass(frozen=True, eq=False)
class Region:
    """Intersection of a polytope with a norm ball."""

    base: Polytope
    ball: NormBall

    def __post_init__(self):
        if self.base.dim != self.ball.dim:
            raise DimensionMismatch("ball and polytope live in different spaces")

    @property
    def dim(self):
        return self.base.dim

    def as_polytope(self):
        return self.base.stack(self.ball.as_polytope())

    def contains(self, x, tol=TOL):
        return self.base.contains(x, tol) and self.ball.contains(x, tol)

    def support(self, direction):
        return support_value(self.base, direction, self.ball)


def _linprog(c, A_ub, b_ub, bounds):
    res = linprog(c, A_ub=A_ub if len(b_ub) else None, b_ub=b_ub if len(b_ub) else None,
                  bounds=bounds, method="highs")
    if res.status == 2:
        raise Infeasible("linear program is infeasible")
    if res.status == 3:
        raise Unbounded("linear program is unbounded")
    if res.status != 0:
        raise RuntimeError(f"LP solver failed: {res.message}")
    return res


def feasible_point(P, ball=None):
    """Some point of P (intersected with ``ball``), or raise Infeasible."""
    if ball is not None and ball.norm_order == 2:
        x = nearest_point(P, ball.center)
        if np.linalg.norm(x - ball.center) > ball.radius + TOL:
            raise Infeasible("polytope misses the ball")
        return x
    return _maximize(P, np.zeros(P.dim), ball)[1]


def nearest_point(P, y):
    """Euclidean projection of y onto P."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if P.contains(y, 0.0):
        return y.copy()
    x0 = _maximize(P, np.zeros(P.dim), None)[1]
    z, _ = solve_qp(2.0 * np.eye(P.dim), -2.0 * y, P.A, P.b, x0)
    return z


def _maximize(P, direction, ball):
    d = P.dim
    direction = np.asarray(direction, dtype=float)
    if ball is None or ball.norm_order == math.inf:
        bounds = [(None, None)] * d
        if ball is not None:
            bounds = list(zip(ball.center - ball.radius, ball.center + ball.radius))
        res = _linprog(-direction, P.A, P.b, bounds)
        return -res.fun, res.x
    if ball.norm_order == 1:
        # lifted form: |x - c| <= t componentwise, sum t <= r
        eye = np.eye(d)
        zero = np.zeros((P.m, d))
        A_ub = np.vstack([
            np.hstack([P.A, zero]),
            np.hstack([eye, -eye]),
            np.hstack([-eye, -eye]),
            np.concatenate([np.zeros(d), np.ones(d)])[None, :],
        ])
        b_ub = np.concatenate([P.b, ball.center, -ball.center, [ball.radius]])
        c = np.concatenate([-direction, np.zeros(d)])
        res = _linprog(c, A_ub, b_ub, [(None, None)] * d + [(0, None)] * d)
        return -res.fun, res.x[:d]
    return _maximize_in_2ball(P, direction, ball)


def _maximize_in_2ball(P, direction, ball):
    c, r = ball.center, ball.radius
    x0 = feasible_point(P, ball)
    if np.linalg.norm(direction) == 0:
        return 0.0, x0
    cons = [{"type": "ineq", "fun": lambda x: r * r - (x - c) @ (x - c),
             "jac": lambda x: -2 * (x - c)}]
    if P.m:
        cons.append({"type": "ineq", "fun": lambda x: P.b - P.A @ x, "jac": lambda x: -P.A})
    res = minimize(lambda x: -direction @ x, x0, jac=lambda x: -direction,
                   constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    x = res.x
    if not (P.contains(x, 1e-7) and ball.contains(x, 1e-7)):
        raise RuntimeError(f"2-norm support subproblem failed: {res.message}")
    return float(direction @ x), x


def support_value(P, direction, ball=None):
    """max direction'x over P (intersected with ``ball`` if given)."""
    direction = np.asarray(direction, dtype=float).reshape(-1)
    if direction.size != P.dim:
        raise DimensionMismatch("direction and polytope dimension differ")
    if not np.all(np.isfinite(direction)):
        raise ValueError("direction must be finite")
    return float(_maximize(P, direction, ball)[0])


def support_values(P, directions, ball=None):
    """Vectorised support_value over the rows of ``directions``."""
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    return np.array([support_value(P, u, ball) for u in directions])


def merge_parallel_rows(P, decimals=12):
    """Keep the tightest row among rows with identical normalized direction.

    Returns the reduced polytope and the indices of the kept rows.  Exact on
    normalized input; it is a cheap prefilter for ``remove_redundant``.
    """
    if P.m == 0:
        return P, np.zeros(0, dtype=int)
    A = P.A if P.row_normalized else P.A / np.linalg.norm(P.A, axis=1)[:, None]
    b = P.b if P.row_normalized else P.b / np.linalg.norm(P.A, axis=1)
    keys = np.round(A, decimals) + 0.0
    best = {}
    for i, key in enumerate(map(bytes, keys)):
        j = best.get(key)
        if j is None or b[i] < b[j]:
            best[key] = i
    kept = np.array(sorted(best.values()), dtype=int)
    return P.select(kept), kept


def remove_redundant(P, tol=TOL):
    """Drop rows implied by the others.

    Row l is redundant when max a_l'x subject to the remaining rows is at
    most b_l - tol.  Returns (irredundant polytope, kept row indices).
    """
    P1, kept = merge_parallel_rows(P)
    keep = list(range(P1.m))
    for i in range(P1.m):
        others = [j for j in keep if j != i]
        if not others:
            continue
        Q = P1.select(others)
        # bound the LP with row i relaxed by one unit so it stays bounded
        relaxed = Q.stack(Polytope(P1.A[i:i + 1], P1.b[i:i + 1] + 1.0))
        val = support_value(relaxed, P1.A[i])
        if val <= P1.b[i] - tol:
            keep.remove(i)
    return P1.select(keep), kept[keep]


def facets_intersecting_ball(P, ball, tol=TOL, margin=0.0, rows=None):
    """Indices of the facets of P met by ``ball``.

    Facet l counts when max a_l'x over P intersected with the ball reaches
    b_l - tol; ties count.  A positive ``margin`` shrinks the radius first,
    which turns the test into one for the open ball: a facet lying exactly
    at distance ``radius`` (or within ``margin`` of it) is then not met.
    """
    if not P.contains(ball.center, max(tol, margin)):
        raise CenterOutside("ball center violates the polytope")
    if margin:
        if margin >= ball.radius:
            return []
        ball = NormBall(ball.center, ball.radius - margin, ball.norm_order)
    rows = range(P.m) if rows is None else rows
    hits = []
    for i in rows:
        if support_value(P, P.A[i], ball) >= P.b[i] - tol:
            hits.append(int(i))
    return hits


def box_vertices(lower, upper):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    corners = np.array(list(itertools.product((0, 1), repeat=lower.size)), dtype=float)
    return lower + corners * (upper - lower)
