"""Aggregative games and their variational-inequality maps.

Agent i picks x_i in a box X_i of R^n and pays

    J_i(x) = x_i'(C sigma(x) + d),    sigma(x) = (1/N) sum_j x_j.

Two pseudo-gradient maps are supported: the Nash map, where agents account
for their own effect on the aggregate, and the Wardrop map, where the
aggregate is taken as given.  Arbitrary games can be plugged in through a
gradient callback with user-supplied monotonicity and Lipschitz constants.
"""

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, NonFiniteOutput, UnsupportedModel
from .geometry import Polytope

NE = "NE"
WE = "WE"


@dataclass(frozen=True, eq=False)
class GameSpec:
    N: int
    n: int
    lower: np.ndarray  # (N, n)
    upper: np.ndarray  # (N, n)
    C: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    map_kind: str = WE
    gradient: Optional[Callable] = None
    lipschitz: Optional[float] = None
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.N < 1 or self.n < 1:
            raise ValueError("need N >= 1 and n >= 1")
        lo = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.N, self.n)).copy()
        hi = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.N, self.n)).copy()
        if np.any(lo > hi):
            raise ValueError("local box has lower bound above upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.map_kind not in (NE, WE):
            raise ValueError(f"map_kind must be 'NE' or 'WE', got {self.map_kind!r}")
        if self.gradient is None:
            if self.C is None or self.d is None:
                raise ValueError("quadratic game needs C and d")
            C = np.array(self.C, dtype=float).reshape(self.n, self.n)
            d = np.array(self.d, dtype=float).reshape(self.n)
            if np.linalg.eigvalsh(0.5 * (C + C.T)).min() <= 0:
                raise ValueError("symmetric part of C must be positive definite")
            object.__setattr__(self, "C", C)
            object.__setattr__(self, "d", d)
        elif self.lipschitz is None or self.alpha is None:
            raise ValueError("callback games need lipschitz and alpha")

    @property
    def dim(self):
        return self.N * self.n

    @property
    def quadratic(self):
        return self.gradient is None

    @property
    def x_lower(self):
        return self.lower.reshape(-1)

    @property
    def x_upper(self):
        return self.upper.reshape(-1)

    def box(self):
        return Polytope.from_box(self.x_lower, self.x_upper)

    def midpoint(self):
        return 0.5 * (self.x_lower + self.x_upper)


def quadratic_game(N, n, C, d, lower, upper, map_kind=WE):
    return GameSpec(N=N, n=n, lower=lower, upper=upper, C=C, d=d, map_kind=map_kind)


def _check_x(spec, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != spec.dim:
        raise DimensionMismatch(f"expected a vector of length {spec.dim}, got {x.size}")
    return x


def aggregate(x, N, n=None):
    """Componentwise mean of the N blocks of the stacked vector x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if n is None:
        n = x.size // N
    if x.size != N * n:
        raise DimensionMismatch(f"length {x.size} is not N*n = {N * n}")
    return x.reshape(N, n).mean(axis=0)


def evaluate_F(spec, x):
    x = _check_x(spec, x)
    if not spec.quadratic:
        out = np.asarray(spec.gradient(x), dtype=float).reshape(-1)
        if out.size != spec.dim:
            raise DimensionMismatch("gradient callback returned wrong length")
    else:
        sigma = aggregate(x, spec.N, spec.n)
        blocks = np.tile(spec.C @ sigma + spec.d, (spec.N, 1))
        if spec.map_kind == NE:
            # own influence: d/dx_i of x_i' C sigma adds C' x_i / N
            blocks = blocks + x.reshape(spec.N, spec.n) @ spec.C / spec.N
        out = blocks.reshape(-1)
    if not np.all(np.isfinite(out)):
        raise NonFiniteOutput("pseudo-gradient is not finite")
    return out


def agent_cost(spec, x, i):
    """J_i(x) for the quadratic-aggregative model."""
    if not spec.quadratic:
        raise UnsupportedModel("agent costs are only defined for the quadratic model")
    x = _check_x(spec, x)
    sigma = aggregate(x, spec.N, spec.n)
    return float(x.reshape(spec.N, spec.n)[i] @ (spec.C @ sigma + spec.d))


def potential_value(spec, x):
    """Social cost sigma'C sigma + d'sigma (total cost divided by N)."""
    if not spec.quadratic:
        raise UnsupportedModel("potential is only defined for the quadratic model")
    sigma = aggregate(_check_x(spec, x), spec.N, spec.n)
    return float(sigma @ spec.C @ sigma + spec.d @ sigma)


def wardrop_potential(spec, x):
    """N (1/2 sigma'C sigma + d'sigma): its gradient is the Wardrop map.

    Only an exact potential when C is symmetric; for asymmetric C the
    Wardrop map is not integrable and this returns the value built from the
    symmetric part.
    """
    if not spec.quadratic:
        raise UnsupportedModel("potential is only defined for the quadratic model")
    sigma = aggregate(_check_x(spec, x), spec.N, spec.n)
    return float(spec.N * (0.5 * sigma @ spec.C @ sigma + spec.d @ sigma))


@dataclass(frozen=True)
class ViMapBundle:
    evaluate: Callable
    lipschitz_L: float
    monotonicity_alpha: float
    # True when alpha only holds along the aggregate (Wardrop map, N > 1)
    aggregate_monotone_only: bool = False


def vi_bundle(spec):
    """Map, Lipschitz constant and strong-monotonicity modulus of the game."""
    f = lambda x: evaluate_F(spec, x)  # noqa: E731
    if not spec.quadratic:
        return ViMapBundle(f, float(spec.lipschitz), float(spec.alpha))
    C, N = spec.C, spec.N
    Cs = 0.5 * (C + C.T)
    lam_min = float(np.linalg.eigvalsh(Cs).min())
    # Jacobian = (1/N)(11' kron C) [+ (1/N)(I kron C') for NE]; it acts on
    # 1 kron v and on w kron v (w orthogonal to 1) separately.
    if spec.map_kind == WE:
        L = float(np.linalg.norm(C, 2))
        return ViMapBundle(f, L, lam_min, aggregate_monotone_only=N > 1)
    on_mean = C + C.T / N
    L = float(np.linalg.norm(on_mean, 2))
    alpha = float(np.linalg.eigvalsh(0.5 * (on_mean + on_mean.T)).min())
    if N > 1:
        L = max(L, float(np.linalg.norm(C, 2)) / N)
        alpha = min(alpha, lam_min / N)
    return ViMapBundle(f, L, alpha)


def aggregate_game(spec):
    """The single-agent game on sigma that the Wardrop problem reduces to.

    Its box is the image of X under the averaging map and its map is
    C sigma + d, which is strongly monotone whenever C is.
    """
    if not spec.quadratic or spec.map_kind != WE:
        raise UnsupportedModel("aggregate reduction needs the quadratic Wardrop model")
    return replace(spec, N=1, lower=spec.lower.mean(axis=0, keepdims=True),
                   upper=spec.upper.mean(axis=0, keepdims=True))
