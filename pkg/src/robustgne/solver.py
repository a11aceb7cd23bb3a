"""Primal-dual equilibrium seeking with multiplier-ranked constraint tightening.

The iterate is y = (x, mu).  Each step evaluates

    T(y) = [ F(x) + A'mu ; -(A x - b + Q(mu, M) c rho 1) ]

and solves the asymmetric-projection subproblem

    find y+ in X x Mdom with  T(y) + D (y+ - y)  in  -normal cone(y+),
    D = [[I/tau, 0], [-2A, I/tau]].

Because D is block lower triangular this is a projected primal step
followed by a projected dual step at the extrapolated primal point.  The
multiplier domain Mdom is a finite union of convex pieces in which the
nonzero multipliers are kept at least zeta apart.
"""

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegenerateInput,
    DimensionMismatch,
    EmptyAfterTightening,
    Infeasible,
    NoFeasiblePiece,
    NotPositiveDefinite,
    OutOfRange,
)
from .game import evaluate_F, vi_bundle
from .geometry import NormBall, Polytope, Region, box_vertices, feasible_point
from .qp import solve_qp
from .tightening import tightening_mask, tightening_vector

logger = logging.getLogger(__name__)

MEMBER_TOL = 1e-9
MAX_EXHAUSTIVE_M = 7


# -- multiplier domain --------------------------------------------------------

def _isotonic_decreasing(t):
    """Least-squares fit of a nonincreasing sequence to t (pool adjacent violators)."""
    blocks = []  # [mean, size]
    for v in t:
        blocks.append([float(v), 1])
        while len(blocks) > 1 and blocks[-2][0] < blocks[-1][0]:
            m2, s2 = blocks.pop()
            m1, s1 = blocks.pop()
            blocks.append([(m1 * s1 + m2 * s2) / (s1 + s2), s1 + s2])
    out = []
    for mean, size in blocks:
        out.extend([mean] * size)
    return np.array(out)


@dataclass(frozen=True)
class MultiplierDomain:
    """Multipliers in [0, cap] whose nonzero entries are >= zeta and
    pairwise at least zeta apart.

    A convex piece is identified by the tuple of its nonzero coordinates in
    decreasing order; all other coordinates are zero.
    """

    m: int
    zeta: float
    cap: float = 1e6

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be nonnegative")
        if not self.zeta > 0:
            raise ValueError("zeta must be positive")
        if not self.cap > self.m * self.zeta:
            raise ValueError("cap too small to hold m separated multipliers")

    def contains(self, mu, tol=MEMBER_TOL):
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.size != self.m:
            return False
        if np.any(mu < -tol) or np.any(mu > self.cap + tol):
            return False
        nz = np.sort(mu[np.abs(mu) > tol])[::-1]
        if nz.size == 0:
            return True
        if nz[-1] < self.zeta - tol:
            return False
        return bool(np.all(nz[:-1] - nz[1:] >= self.zeta - tol))

    def pieces(self):
        """Every (ordered nonzero support) tuple; sum_s m!/(m-s)! of them."""
        out = [()]
        for s in range(1, self.m + 1):
            out.extend(itertools.permutations(range(self.m), s))
        return out

    def candidate_pieces(self, point):
        """Pieces ordered like ``point`` with zeros on a suffix (m+1 of them)."""
        order = tuple(int(i) for i in np.argsort(-np.asarray(point), kind="stable"))
        return [order[:s] for s in range(self.m + 1)]

    def piece_start(self, piece):
        mu = np.zeros(self.m)
        s = len(piece)
        for k, i in enumerate(piece):
            mu[i] = (s - k) * self.zeta
        return mu

    def piece_constraints(self, piece):
        """(G, h) with G z <= h over the free coordinates z = mu[piece]."""
        s = len(piece)
        rows, rhs = [], []
        for k in range(s - 1):
            r = np.zeros(s)
            r[k], r[k + 1] = -1.0, 1.0
            rows.append(r)
            rhs.append(-self.zeta)
        if s:
            r = np.zeros(s)
            r[s - 1] = -1.0
            rows.append(r)
            rhs.append(-self.zeta)
            r = np.zeros(s)
            r[0] = 1.0
            rows.append(r)
            rhs.append(self.cap)
        return np.array(rows, dtype=float).reshape(len(rows), s), np.array(rhs, dtype=float)

    def project_piece_euclidean(self, point, piece):
        p = np.asarray(point, dtype=float)
        s = len(piece)
        mu = np.zeros(self.m)
        if s:
            idx = np.array(piece)
            shift = self.zeta * np.arange(s, 0, -1)
            nu = _isotonic_decreasing(p[idx] - shift)
            nu = np.clip(nu, 0.0, self.cap - s * self.zeta)
            mu[idx] = nu + shift
        return mu

    def project(self, point, metric=None, exhaustive=None):
        """Nearest point of the domain in the norm induced by ``metric``.

        With no metric (Euclidean, or any positive multiple of the identity)
        the nearest point keeps the ordering of ``point`` and zeroes a
        suffix of it, because the domain is invariant under coordinate
        permutations and swapping two out-of-order entries strictly reduces
        the distance.  Only m+1 pieces are then tried unless ``exhaustive``.
        """
        point = np.asarray(point, dtype=float).reshape(-1)
        if point.size != self.m:
            raise DimensionMismatch("point has wrong length")
        if metric is None:
            pieces = self.pieces() if exhaustive else self.candidate_pieces(point)
            best, best_val = None, math.inf
            for piece in pieces:
                mu = self.project_piece_euclidean(point, piece)
                val = float((mu - point) @ (mu - point))
                if val < best_val - 1e-15:
                    best, best_val = mu, val
            return best
        x, mu = project_skewed(point, np.zeros(0), np.zeros(0), self, metric, exhaustive)
        return mu


def project_skewed(point, lower, upper, mdom, metric, exhaustive=None):
    """argmin (y - point)' W (y - point) over [lower, upper] x Mdom.

    ``point`` stacks the primal part (length len(lower)) and the multiplier
    part (length mdom.m).  Only the symmetric part of W matters.  One convex
    QP is solved per piece of Mdom (all pieces when ``exhaustive`` or
    m <= 7, otherwise the m+1 order-consistent candidates) and the minimum
    is returned, ties going to the earlier piece.
    """
    point = np.asarray(point, dtype=float).reshape(-1)
    lower = np.asarray(lower, dtype=float).reshape(-1)
    upper = np.asarray(upper, dtype=float).reshape(-1)
    nx, m = lower.size, mdom.m
    if point.size != nx + m:
        raise DimensionMismatch("point length differs from primal + multiplier size")
    W = np.asarray(metric, dtype=float)
    W = 0.5 * (W + W.T)
    if np.linalg.eigvalsh(W).min() <= 0:
        raise NotPositiveDefinite("projection metric must be positive definite")
    if exhaustive is None:
        exhaustive = m <= MAX_EXHAUSTIVE_M
    pieces = mdom.pieces() if exhaustive else mdom.candidate_pieces(point[nx:])
    eye_x = np.eye(nx)
    best, best_val = None, math.inf
    for piece in pieces:
        s = len(piece)
        # y = S z with z = (x, mu[piece])
        S = np.zeros((nx + m, nx + s))
        S[:nx, :nx] = eye_x
        for k, i in enumerate(piece):
            S[nx + i, nx + k] = 1.0
        H = 2.0 * S.T @ W @ S
        g = -2.0 * S.T @ W @ point
        Gm, hm = mdom.piece_constraints(piece)
        G = np.zeros((2 * nx + Gm.shape[0], nx + s))
        G[:nx, :nx] = eye_x
        G[nx:2 * nx, :nx] = -eye_x
        G[2 * nx:, nx:] = Gm
        h = np.concatenate([upper, -lower, hm])
        z0 = np.concatenate([np.clip(point[:nx], lower, upper),
                             mdom.piece_start(piece)[list(piece)]])
        z, _ = solve_qp(H, g, G, h, z0)
        y = S @ z
        val = float((y - point) @ W @ (y - point))
        if val < best_val - 1e-13 * max(1.0, abs(val)):
            best, best_val = y, val
    if best is None:
        raise NoFeasiblePiece("no piece of the multiplier domain was feasible")
    return best[:nx], best[nx:]


# -- operator pieces ----------------------------------------------------------

def T_eval(x, mu, F, A, b, M, c, rho):
    """The primal-dual map with tightening; ``F`` is F(x) already evaluated."""
    A = np.asarray(A, dtype=float)
    top = F + A.T @ mu
    if A.shape[0] == 0:
        return top, np.zeros(0)
    t = tightening_vector(mu, M, c, rho)
    return top, -(A @ x - b + t)


def D_build(tau, A):
    """The asymmetric projection matrix D and its symmetric part.

    D_s = [[I/tau, -A'], [-A, I/tau]] is positive definite exactly when
    tau * ||A||_2 < 1 (Schur complement).
    """
    if not tau > 0:
        raise OutOfRange("tau must be positive")
    A = np.asarray(A, dtype=float)
    m, nx = A.shape
    D = np.zeros((nx + m, nx + m))
    D[:nx, :nx] = np.eye(nx) / tau
    D[nx:, nx:] = np.eye(m) / tau
    D[nx:, :nx] = -2.0 * A
    Ds = 0.5 * (D + D.T)
    normA = np.linalg.norm(A, 2) if A.size else 0.0
    if tau * normA >= 1.0:
        raise NotPositiveDefinite(
            f"D_s is not positive definite: tau*||A|| = {tau * normA:.6g} >= 1 "
            "(the asymmetric projection matrix needs tau < 1/||A||)")
    return D, Ds


def tau_primal_term(L_F, alpha, norm_A):
    """(-L^2 + sqrt(L^4 + 4 a^2 |A|^2)) / (2 a |A|^2), in cancellation-free form."""
    L2, a2 = L_F * L_F, norm_A * norm_A
    return 2.0 * alpha / (L2 + math.sqrt(L2 * L2 + 4.0 * alpha * alpha * a2))


def tau_dual_term(rho, zeta, norm_A):
    """(-r(1+|A|^2) + sqrt(r^2(1+|A|^2)^2 + 16 z^2 |A|^2)) / (4 z |A|^2)."""
    a2 = norm_A * norm_A
    base = rho * (1.0 + a2)
    return 4.0 * zeta / (base + math.sqrt(base * base + 16.0 * zeta * zeta * a2))


def tau_bound_subdomain(L_F, alpha, norm_A, rho, zeta):
    """Largest step for which the iteration converges on each convex piece."""
    if norm_A == 0:
        warnings.warn("||A|| = 0: the step-size bound is vacuous", RuntimeWarning, stacklevel=2)
        return math.inf
    if min(L_F, alpha, norm_A, rho, zeta) <= 0:
        raise DegenerateInput("all inputs to the step-size bound must be positive")
    return min(tau_primal_term(L_F, alpha, norm_A), tau_dual_term(rho, zeta, norm_A))


def tau_bound_global(R_bar, C_bar, zeta):
    """(-(C+R) + sqrt((C+R)^2 + 2 zeta R)) / (2R): convergence across pieces."""
    if not R_bar > 0:
        raise DegenerateInput("R_bar must be positive")
    s = C_bar + R_bar
    return zeta / (s + math.sqrt(s * s + 2.0 * zeta * R_bar))


def estimate_R_bar(game, A, b, mdom, max_exact_dim=14, samples=4000, seed=0):
    """Bound sup ||2A(F(x) + A'mu)|| and sup ||Ax - b|| over X x Mdom.

    For the quadratic model both norms are convex in (x, mu), so their
    maxima over the box X x [0, cap]^m sit at vertices; those are enumerated
    when there are few enough.  Otherwise random points are used and the
    result is inflated by 2.  Returns (R_bar, mode).
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m = A.shape[0]
    lo, hi = game.x_lower, game.x_upper
    mu_hi = np.full(m, mdom.cap)
    exact = game.quadratic and lo.size + m <= max_exact_dim
    if exact:
        xs = box_vertices(lo, hi)
        mus = box_vertices(np.zeros(m), mu_hi)
    else:
        rng = np.random.default_rng(seed)
        xs = rng.uniform(lo, hi, size=(samples, lo.size))
        mus = rng.uniform(0, mu_hi, size=(samples, m)) if m else np.zeros((samples, 0))
    Fs = np.array([evaluate_F(game, x) for x in xs])
    r1 = 0.0
    if m:
        base = Fs @ (2 * A.T)
        push = mus @ (2 * A @ A.T)
        if exact:
            r1 = max(np.linalg.norm(fb + push, axis=1).max() for fb in base)
        else:
            r1 = np.linalg.norm(base + push, axis=1).max()
    r2 = np.linalg.norm(xs @ A.T - b, axis=1).max() if m else 0.0
    R = max(r1, r2)
    if not exact:
        return 2.0 * R, "sampled"
    return R, "vertex"


# -- iteration ----------------------------------------------------------------

@dataclass
class SolverConfig:
    rho: float
    M: int
    zeta: float = 0.05
    tau: Optional[float] = None
    tau_mode: str = "subdomain"  # explicit | subdomain | from-bounds
    tau_safety: float = 0.9
    xi: float = 1e-8
    max_iter: int = 200_000
    norm_order: float = 2
    c: Optional[float] = None
    cap: float = 1e6
    exhaustive_projection: bool = False

    def __post_init__(self):
        if self.tau_mode not in ("explicit", "subdomain", "from-bounds"):
            raise ValueError(f"unknown tau_mode {self.tau_mode!r}")
        if self.tau_mode == "explicit" and not (self.tau and self.tau > 0):
            raise ValueError("explicit tau_mode needs tau > 0")
        if not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.M < 0:
            raise OutOfRange("M must be nonnegative")

    def circumscribing_factor(self, dim):
        if self.c is not None:
            return self.c
        return 1.0 if self.norm_order in (1, 2) else math.sqrt(dim)


@dataclass
class IterateState:
    x: np.ndarray
    mu: np.ndarray
    kappa: int = 0

    @property
    def y(self):
        return np.concatenate([self.x, self.mu])


@dataclass
class SolveResult:
    state: IterateState
    region: Region
    mask: np.ndarray
    step_norm: float
    iterations: int
    converged: bool
    tau: float
    c: float
    fixed_point_residual: float
    tau_info: dict = field(default_factory=dict)
    trace: Optional[list] = None
    gap_trapped: tuple = ()

    @property
    def x(self):
        return self.state.x

    @property
    def mu(self):
        return self.state.mu

    @property
    def y_star(self):
        return self.state

    @property
    def active_mask(self):
        return self.mask

    @property
    def residual(self):
        return self.step_norm


def select_tau(game, A, b, config, mdom):
    """Step size per ``config.tau_mode``; returns (tau, info dict)."""
    if config.tau_mode == "explicit":
        return float(config.tau), {"mode": "explicit"}
    bundle = vi_bundle(game)
    normA = float(np.linalg.norm(A, 2)) if A.size else 0.0
    info = {"mode": config.tau_mode, "norm_A": normA, "L_F": bundle.lipschitz_L,
            "alpha": bundle.monotonicity_alpha}
    if normA == 0:
        if bundle.monotonicity_alpha > 0:
            tau = bundle.monotonicity_alpha / bundle.lipschitz_L ** 2
        else:
            tau = 1.0 / bundle.lipschitz_L
        return config.tau_safety * tau, info
    c = config.circumscribing_factor(A.shape[1])
    bounds = [0.99 / normA,
              tau_bound_subdomain(bundle.lipschitz_L, bundle.monotonicity_alpha,
                                  normA, config.rho, config.zeta)]
    info["subdomain_bound"] = bounds[1]
    if config.tau_mode == "from-bounds":
        R_bar, mode = estimate_R_bar(game, A, b, mdom)
        C_bar = c * config.rho * math.sqrt(max(A.shape[0] - config.M, 0))
        bounds.append(tau_bound_global(R_bar, C_bar, config.zeta))
        info.update(global_bound=bounds[-1], R_bar=R_bar, R_bar_mode=mode, C_bar=C_bar)
    return config.tau_safety * min(bounds), info


def primal_dual_step(x, mu, game, A, b, tau, M, c, rho, mdom, exhaustive=False):
    """One asymmetric-projection update; returns (x+, mu+)."""
    F = evaluate_F(game, x)
    Tx, Tmu = T_eval(x, mu, F, A, b, M, c, rho)
    x_new = np.clip(x - tau * Tx, game.x_lower, game.x_upper)
    if A.shape[0] == 0:
        return x_new, mu
    target = mu - tau * Tmu + 2.0 * tau * (A @ (x_new - x))
    return x_new, mdom.project(target, exhaustive=exhaustive)


def run(game, coupling, config, y0=None, trace=False):
    """Iterate the tightened primal-dual update to a fixed point.

    ``coupling`` holds the normalized sampled rows of the domain; the box
    of ``game`` is enforced by projection.  The returned region is the
    untightened domain (box plus coupling rows) intersected with the ball
    of radius ``config.rho`` around x*.
    """
    A, b = coupling.A, coupling.b
    m, nx = A.shape
    if nx != game.dim:
        raise DimensionMismatch("coupling rows and game dimension differ")
    if m and not np.allclose(np.linalg.norm(A, axis=1), 1.0, atol=1e-12):
        raise ValueError("coupling rows must be normalized")
    M = min(config.M, m)
    if config.M > m:
        logger.warning("M=%d exceeds the %d coupling rows; using M=%d", config.M, m, m)
    c = config.circumscribing_factor(nx)
    mdom = MultiplierDomain(m, config.zeta, config.cap)
    tau, tau_info = select_tau(game, A, b, config, mdom)
    D_build(tau, A)

    box = game.box()
    if m and M < m:
        full = Polytope(A, b - c * config.rho).stack(box)
        if full.is_empty():
            logger.warning("tightening every coupling row empties the domain")

    if y0 is None:
        x, mu = game.midpoint(), np.zeros(m)
    else:
        x = np.clip(np.asarray(y0.x, dtype=float), game.x_lower, game.x_upper)
        mu = mdom.project(np.asarray(y0.mu, dtype=float)) if m else np.zeros(0)
    states = [] if trace else None
    step = math.inf
    best = (math.inf, x, mu, 0)
    kappa = 0
    converged = False
    exhaustive = config.exhaustive_projection
    while kappa < config.max_iter:
        x_new, mu_new = primal_dual_step(x, mu, game, A, b, tau, M, c, config.rho, mdom, exhaustive)
        step = float(np.linalg.norm(np.concatenate([x_new - x, mu_new - mu])))
        kappa += 1
        if trace:
            states.append((kappa, x_new.copy(), mu_new.copy(), step,
                           tightening_mask(mu_new, M) if m else np.zeros(0, dtype=int)))
        x, mu = x_new, mu_new
        if step < best[0]:
            best = (step, x, mu, kappa)
        if step <= config.xi:
            converged = True
            break
    if not converged:
        step, x, mu, _ = best
        logger.warning("no convergence after %d iterations (best step %.3g)", kappa, step)

    if m and mu.max() >= 0.99 * config.cap:
        warnings.warn(f"a multiplier is within 1% of the cap {config.cap:g}; the cap may bind",
                      RuntimeWarning, stacklevel=2)
    mask = tightening_mask(mu, M) if m else np.zeros(0, dtype=int)
    if m:
        tightened = Polytope(A, b - c * config.rho * mask).stack(box)
        if tightened.is_empty():
            raise EmptyAfterTightening("domain is empty under the final tightening pattern")
    x_fp, mu_fp = primal_dual_step(x, mu, game, A, b, tau, M, c, config.rho, mdom, exhaustive)
    residual = float(np.linalg.norm(np.concatenate([x_fp - x, mu_fp - mu])))
    region = Region(coupling.stack(box), NormBall(x, config.rho, config.norm_order))
    trapped = ()
    if m:
        # A violated row whose multiplier sits at 0 is a fixed point of the
        # projected map but not an equilibrium: each dual step tau*violation
        # falls short of zeta/2 and projects back onto 0.
        slack = b - c * config.rho * mask - A @ x
        trapped = tuple(int(l) for l in np.flatnonzero((mu == 0) & (slack < -max(10 * config.xi, 1e-6))))
        if trapped and converged:
            converged = False
            warnings.warn(f"rows {list(trapped)} are violated with zero multiplier: the dual step "
                          f"(tau={tau:.3g}) cannot cross the gap zeta={config.zeta:g}; "
                          "use a larger tau or a smaller zeta", RuntimeWarning, stacklevel=2)
    return SolveResult(IterateState(x, mu, kappa), region, mask, step, kappa, converged,
                       tau, c, residual, tau_info, states, trapped)


def complementarity_violations(result, coupling, M, tol):
    """Rows breaking approximate complementarity at the returned point.

    Rows with mu >= zeta must be active under their final tightening; rows
    with mu = 0 must satisfy their tightened inequality.
    """
    A, b = coupling.A, coupling.b
    if A.shape[0] == 0:
        return []
    t = result.c * result.region.ball.radius * result.mask
    slack = b - t - A @ result.x
    bad = []
    for l, (mu_l, s) in enumerate(zip(result.mu, slack)):
        if mu_l > 0 and abs(s) > tol:
            bad.append(l)
        elif mu_l == 0 and s < -tol:
            bad.append(l)
    return bad
