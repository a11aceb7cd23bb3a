"""Violation-probability certificates for the returned region.

A priori: with d the support-rank bound, the region violates a fresh
constraint with probability above eps_bar on a fraction of multisamples at
most binom_tail(d, K, eps_bar).

A posteriori: with s* support samples and M intersecting facets, the
violation exceeds eps(s* + M) with confidence at least 1 - beta, where
eps(k) splits beta evenly over k = 0..K-1.
"""

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyRegion, Infeasible, NonReproduciblePipeline, OutOfRange
from .geometry import feasible_point
from .scenario import BAND, fresh_constraints, lift_band_rows

logger = logging.getLogger(__name__)

APRIORI = "a-priori"
APOSTERIORI = "a-posteriori"


def _log_comb(K, i):
    return math.lgamma(K + 1) - math.lgamma(i + 1) - math.lgamma(K - i + 1)


def binom_tail(d, K, eps):
    """sum_{i<d} C(K,i) eps^i (1-eps)^(K-i), summed in log space."""
    if not (0 <= d <= K):
        raise OutOfRange(f"need 0 <= d <= K, got d={d}, K={K}")
    if not 0.0 <= eps <= 1.0:
        raise OutOfRange(f"eps must lie in [0, 1], got {eps}")
    if d == 0:
        return 0.0
    if eps == 0.0:
        return 1.0
    if eps == 1.0:
        return 1.0 if d - 1 >= K else 0.0
    le, l1 = math.log(eps), math.log1p(-eps)
    logs = [_log_comb(K, i) + i * le + (K - i) * l1 for i in range(d)]
    top = max(logs)
    return min(1.0, math.exp(top) * math.fsum(math.exp(v - top) for v in logs))


def dimension_bound(n, M, N=1, aggregate=True):
    """Support-rank bound: n+M-1 for aggregate-only constraints, nN+M otherwise."""
    return n + M - 1 if aggregate else n * N + M


def apriori_confidence(d, K, eps_bar):
    """1 - binom_tail(d, K, eps_bar); zero (with a warning) when d > K."""
    if d < 1:
        raise OutOfRange("dimension bound must be at least 1")
    if not 0.0 <= eps_bar <= 1.0:
        raise OutOfRange(f"eps_bar must lie in [0, 1], got {eps_bar}")
    if d > K:
        warnings.warn(f"dimension bound {d} exceeds K={K}: the certificate is vacuous",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return 1.0 - binom_tail(d, K, eps_bar)


def eps_required(d, K, beta, tol=1e-12):
    """Smallest eps_bar with binom_tail(d, K, eps_bar) <= beta (bisection)."""
    if not 0.0 < beta < 1.0:
        raise OutOfRange("beta must lie in (0, 1)")
    if d < 1:
        raise OutOfRange("d must be at least 1")
    if d > K:
        warnings.warn(f"dimension bound {d} exceeds K={K}: no eps_bar below 1 works",
                      RuntimeWarning, stacklevel=2)
        return 1.0
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if binom_tail(d, K, mid) <= beta:
            hi = mid
        else:
            lo = mid
    return hi


def eps_aposteriori(k, K, beta):
    """eps(k) = 1 - ((beta/K) / C(K,k))^(1/(K-k)) for k < K, and eps(K) = 1.

    Each term C(K,k)(1-eps(k))^(K-k) then equals beta/K, so the K terms
    k = 0..K-1 sum to beta.
    """
    if not 0 <= k <= K:
        raise OutOfRange(f"need 0 <= k <= K, got k={k}, K={K}")
    if not 0.0 < beta < 1.0:
        raise OutOfRange("beta must lie in (0, 1)")
    if k == K:
        return 1.0
    log_ratio = math.log(beta / K) - _log_comb(K, k)
    return -math.expm1(log_ratio / (K - k))


@dataclass
class Certificate:
    kind: str
    epsilon: float
    beta_or_confidence: float
    K: int
    d: Optional[int] = None
    s_star: Optional[int] = None
    M: Optional[int] = None
    heuristic: bool = False
    seeds: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise OutOfRange("epsilon must lie in [0, 1]")
        if self.kind not in (APRIORI, APOSTERIORI):
            raise ValueError(f"unknown certificate kind {self.kind!r}")

    @property
    def confidence(self):
        return self.beta_or_confidence if self.kind == APRIORI else 1.0 - self.beta_or_confidence

    def to_dict(self):
        out = asdict(self)
        out["confidence"] = self.confidence
        if self.kind == APOSTERIORI:
            out["beta"] = self.beta_or_confidence
            out["convention"] = "equal split of beta over k = 0..K-1, eps(K) = 1"
        else:
            out["eps_bar"] = self.epsilon
        return out


def apriori_certificate(d, K, eps_bar, M=None, seeds=None):
    conf = apriori_confidence(d, K, eps_bar)
    return Certificate(APRIORI, eps_bar, conf, K, d=d, M=M, seeds=dict(seeds or {}))


def aposteriori_certificate(s_star, M_observed, K, beta, heuristic=False, seeds=None):
    k = min(s_star + M_observed, K)
    return Certificate(APOSTERIORI, eps_aposteriori(k, K, beta), beta, K, d=k,
                       s_star=s_star, M=M_observed, heuristic=heuristic,
                       seeds=dict(seeds or {}))


# -- support counting ---------------------------------------------------------

def count_support_of_equilibrium(rerun, S, x_star, tol=1e-6, baseline_tol=1e-9, key=None):
    """Samples whose removal moves the returned equilibrium by more than tol.

    ``rerun(S')`` must run the full deterministic pipeline on multisample S'
    and return its equilibrium.  If ``key(S')`` is given, reruns whose key
    matches an earlier one reuse that result; a key that captures the
    reduced domain skips the many removals that leave it unchanged.
    Returns (count, indices).
    """
    x_star = np.asarray(x_star, dtype=float)
    cache = {}

    def solve(Sp):
        if key is None:
            return np.asarray(rerun(Sp), dtype=float)
        k = key(Sp)
        if k not in cache:
            cache[k] = np.asarray(rerun(Sp), dtype=float)
        return cache[k]

    base = solve(S)
    if np.linalg.norm(base - x_star, np.inf) > baseline_tol:
        raise NonReproduciblePipeline(
            f"rerun on the full multisample moved x* by {np.linalg.norm(base - x_star, np.inf):.3g}")
    support = []
    for k in range(S.K):
        xk = solve(S.without(k))
        if np.linalg.norm(xk - x_star, np.inf) > tol:
            support.append(k)
    return len(support), support


def active_support_estimate(x, A, b, origin, tol=1e-6):
    """Draws owning a row active at x within tol (fast, heuristic)."""
    A = np.asarray(A, dtype=float)
    if A.shape[0] == 0:
        return 0, []
    active = np.abs(b - A @ x) <= tol
    idx = sorted({int(o) for o in np.asarray(origin)[active] if o >= 0})
    return len(idx), idx


# -- Monte Carlo validation ---------------------------------------------------

def _check_region(region):
    try:
        feasible_point(region.base, region.ball)
    except Infeasible as exc:
        raise EmptyRegion("region is empty") from exc


def band_support_table(region, n, N):
    """Support values of the region along +avg_j and -avg_j, j < n."""
    dirs, _ = lift_band_rows(np.zeros((1, n)), np.zeros((1, n)), N)
    return np.array([region.support(a) for a in dirs])


def empirical_violation(region, model, n_fresh, seed, tol=1e-9):
    """Fraction of fresh draws whose half-spaces fail to contain the region.

    For band models the 2n support values of the region are computed once
    and compared against every draw, and likewise the single support value
    when the affine model has a fixed normal.  Other models solve one LP per
    draw.
    The region may live in the full space (dimension N*n) or, for band
    models, in the aggregate space (dimension n).
    """
    if n_fresh < 1:
        raise ValueError("n_fresh must be positive")
    _check_region(region)
    dim = region.dim
    if model.kind == BAND:
        N = model.N if dim == model.N * model.n else 1
        sup = band_support_table(region, model.n, N)
        _, b, _ = fresh_constraints(model, n_fresh, seed, dim=model.n)
        fails = int((sup[None, :] > b.reshape(n_fresh, -1) + tol).any(axis=1).sum())
        return fails / n_fresh
    A, b, _ = fresh_constraints(model, n_fresh, seed, dim=dim)
    if model.direction_scale == 0:
        # every draw shares one normal; only b varies
        sup = region.support(A[0])
        return int((sup > b + tol).sum()) / n_fresh
    fails = 0
    for a_row, b_val in zip(A, b):
        if region.support(a_row) > b_val + tol:
            fails += 1
    return fails / n_fresh
