"""Uncertainty models, i.i.d. multisamples and the sampled feasible domain.

Two families of affine coupling constraints a(delta)'x <= b(delta) are
provided:

* ``aggregate-band``: each draw is a band  lo <= sigma(x) <= hi  on the
  aggregate, i.e. 2n rows on the decision vector;
* ``generic-affine``: each draw is a single half-space with random normal
  and offset.

Sampling is a pure function of (model, K, seed).
"""

import io
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyDomain,
    Infeasible,
    InvalidDistributionParams,
    UnsupportedKind,
)
from .geometry import Polytope, feasible_point, normalize_rows, remove_redundant

BAND = "aggregate-band"
AFFINE = "generic-affine"
LAWS = ("uniform", "gaussian")


@dataclass(frozen=True, eq=False)
class UncertaintyModel:
    """Distribution of the coupling constraints.

    Band parameters: ``lower_nominal``/``upper_nominal`` (n-vectors) are
    perturbed by ``spread`` (half-width for the uniform law, standard
    deviation for the gaussian one).  With ``coupling="common"`` one scalar
    perturbation moves all components of a bound together.  Inverted draws
    (lo > hi in some component) are redrawn, or swapped if
    ``inverted="swap"``.

    Affine parameters: normal a ~ ``direction_mean`` + ``direction_scale`` *
    noise, offset b ~ ``offset_mean`` + ``offset_scale`` * noise.
    """

    kind: str
    seed: int = 0
    N: int = 1
    n: int = 1
    law: str = "uniform"
    lower_nominal: Optional[np.ndarray] = None
    upper_nominal: Optional[np.ndarray] = None
    spread: float = 0.0
    coupling: str = "independent"
    inverted: str = "resample"
    direction_mean: Optional[np.ndarray] = None
    direction_scale: float = 0.0
    offset_mean: float = 0.0
    offset_scale: float = 0.0

    def __post_init__(self):
        if self.kind not in (BAND, AFFINE):
            raise InvalidDistributionParams(f"unknown uncertainty kind {self.kind!r}")
        if self.law not in LAWS:
            raise InvalidDistributionParams(f"unknown law {self.law!r}")
        if self.kind == BAND:
            for name in ("lower_nominal", "upper_nominal"):
                v = getattr(self, name)
                if v is None:
                    raise InvalidDistributionParams(f"band model needs {name}")
                v = np.broadcast_to(np.asarray(v, dtype=float), (self.n,)).copy()
                object.__setattr__(self, name, v)
            if np.any(self.lower_nominal > self.upper_nominal):
                raise InvalidDistributionParams("nominal band is inverted")
            if self.spread < 0:
                raise InvalidDistributionParams("spread must be nonnegative")
            if self.coupling not in ("independent", "common"):
                raise InvalidDistributionParams(f"unknown coupling {self.coupling!r}")
            if self.inverted not in ("resample", "swap"):
                raise InvalidDistributionParams(f"unknown inverted policy {self.inverted!r}")
        else:
            if self.direction_mean is None:
                raise InvalidDistributionParams("affine model needs direction_mean")
            a = np.asarray(self.direction_mean, dtype=float).reshape(-1)
            if a.size != self.N * self.n:
                raise InvalidDistributionParams("direction_mean must have length N*n")
            if self.direction_scale < 0 or self.offset_scale < 0:
                raise InvalidDistributionParams("scales must be nonnegative")
            if self.direction_scale == 0 and np.linalg.norm(a) == 0:
                raise InvalidDistributionParams("constraint normals would be zero")
            object.__setattr__(self, "direction_mean", a)

    @property
    def dim(self):
        return self.N * self.n

    @property
    def rows_per_sample(self):
        return 2 * self.n if self.kind == BAND else 1

    def with_seed(self, seed):
        return replace(self, seed=int(seed))

    def _noise(self, rng, shape):
        if self.law == "uniform":
            return rng.uniform(-1.0, 1.0, size=shape)
        return rng.standard_normal(size=shape)

    def draw_bands(self, K, rng):
        """(K, n) arrays of lower and upper aggregate bounds."""
        width = 1 if self.coupling == "common" else self.n

        def draw(count):
            l = self.lower_nominal + self.spread * self._noise(rng, (count, width))
            u = self.upper_nominal + self.spread * self._noise(rng, (count, width))
            return np.broadcast_to(l, (count, self.n)).copy(), np.broadcast_to(u, (count, self.n)).copy()

        lo, hi = draw(K)
        if self.inverted == "swap":
            return np.minimum(lo, hi), np.maximum(lo, hi)
        for _ in range(1000):
            bad = np.flatnonzero((lo > hi).any(axis=1))
            if bad.size == 0:
                return lo, hi
            lo[bad], hi[bad] = draw(bad.size)
        raise InvalidDistributionParams("could not draw non-inverted bands")

    def draw_affine(self, K, rng):
        a = self.direction_mean + self.direction_scale * self._noise(rng, (K, self.dim))
        for _ in range(1000):
            zero = np.linalg.norm(a, axis=1) <= 1e-12
            if not zero.any():
                break
            a[zero] = self.direction_mean + self.direction_scale * self._noise(rng, (int(zero.sum()), self.dim))
        else:
            raise InvalidDistributionParams("could not draw a nonzero normal")
        b = self.offset_mean + self.offset_scale * self._noise(rng, (K,))
        return a, b


def lift_band_rows(lo, hi, N):
    """Rows of lo <= sigma(x) <= hi acting on the stacked vector x.

    Per draw the order is: upper rows for components 1..n, then lower rows.
    """
    K, n = lo.shape
    avg = np.tile(np.eye(n), (1, N)) / N  # sigma = avg @ x
    A = np.tile(np.vstack([avg, -avg]), (K, 1))
    b = np.hstack([hi, -lo]).reshape(-1)
    return A, b


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Realized constraints of a K-multisample.

    ``A``/``b`` hold one row per realized half-space; ``sample_index[r]``
    names the draw that produced row r.  For band models the raw bounds are
    kept in ``lo``/``hi``.
    """

    kind: str
    K: int
    seed: Optional[int]
    N: int
    n: int
    A: np.ndarray
    b: np.ndarray
    sample_index: np.ndarray
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __len__(self):
        return self.K

    @property
    def dim(self):
        return self.N * self.n

    def without(self, k):
        """The multisample with draw k removed (indices are renumbered)."""
        if not 0 <= k < self.K:
            raise IndexError(k)
        keep = self.sample_index != k
        idx = self.sample_index[keep]
        idx = np.where(idx > k, idx - 1, idx)
        lo = hi = None
        if self.lo is not None:
            lo = np.delete(self.lo, k, axis=0)
            hi = np.delete(self.hi, k, axis=0)
        return replace(self, K=self.K - 1, A=self.A[keep], b=self.b[keep],
                       sample_index=idx, lo=lo, hi=hi)

    def subset(self, ks):
        ks = sorted(int(k) for k in ks)
        out = self
        for k in reversed(range(self.K)):
            if k not in ks:
                out = out.without(k)
        return out

    def polytope(self):
        return Polytope(self.A, self.b)


def draw_multisample(model, K):
    """K i.i.d. draws from ``model``; reproducible from ``model.seed``."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    rng = np.random.default_rng(model.seed)
    if model.kind == BAND:
        lo, hi = model.draw_bands(K, rng)
        A, b = lift_band_rows(lo, hi, model.N)
        idx = np.repeat(np.arange(K), 2 * model.n)
        return SampleSet(BAND, K, model.seed, model.N, model.n, A, b, idx, lo, hi)
    A, b = model.draw_affine(K, rng)
    return SampleSet(AFFINE, K, model.seed, model.N, model.n, A, b, np.arange(K))


def fresh_constraints(model, count, seed, dim=None):
    """Rows (A, b) of ``count`` fresh draws, in the space of dimension ``dim``.

    ``dim`` defaults to N*n; band models may also be realized directly in the
    n-dimensional aggregate space.
    """
    S = draw_multisample(model.with_seed(seed), count)
    dim = S.dim if dim is None else dim
    if dim == S.dim:
        return S.A, S.b, S.sample_index
    if S.kind == BAND and dim == S.n:
        A, b = lift_band_rows(S.lo, S.hi, 1)
        return A, b, S.sample_index
    raise DimensionMismatch(f"cannot realize constraints in dimension {dim}")


@dataclass(frozen=True, eq=False)
class Domain:
    """Normalized sampled domain with row provenance.

    ``origin[r]`` is the draw index behind row r, or -1 for a row of the
    deterministic box.
    """

    polytope: Polytope
    origin: np.ndarray

    @property
    def coupling_rows(self):
        return np.flatnonzero(self.origin >= 0)

    def coupling(self):
        """The sampled rows only (the box is handled by projection)."""
        return self.polytope.select(self.coupling_rows)

    def coupling_origin(self):
        return self.origin[self.coupling_rows]


def _assemble(box, A, b, origin_samples, redundancy):
    P = normalize_rows(np.vstack([box.A, A]), np.concatenate([box.b, b]))
    origin = np.concatenate([np.full(box.m, -1), origin_samples]).astype(int)
    try:
        feasible_point(P)
    except Infeasible as exc:
        raise EmptyDomain("sampled domain is empty") from exc
    if redundancy:
        P, kept = remove_redundant(P)
        origin = origin[kept]
    return Domain(P, origin)


def build_domain(box, S, redundancy=True):
    """X intersected with every sampled half-space, normalized."""
    if S.K and S.A.shape[1] != box.dim:
        raise DimensionMismatch("sample rows and box have different dimensions")
    return _assemble(box, S.A, S.b, S.sample_index, redundancy)


def reduce_to_aggregate(lower, upper, S, N=None, redundancy=True):
    """Sampled domain in aggregate space.

    ``lower``/``upper`` are the (N, n) local bounds.  Returns the Domain on
    sigma: image of the box under the averaging map intersected with all
    bands.
    """
    if S.kind != BAND:
        raise UnsupportedKind("aggregate reduction needs band constraints")
    lower = np.asarray(lower, dtype=float).reshape(-1, S.n)
    upper = np.asarray(upper, dtype=float).reshape(-1, S.n)
    box = Polytope.from_box(lower.mean(axis=0), upper.mean(axis=0))
    A, b = lift_band_rows(S.lo, S.hi, 1)
    idx = np.repeat(np.arange(S.K), 2 * S.n)
    return _assemble(box, A, b, idx, redundancy)


# -- text serialization ------------------------------------------------------

def dump_samples(S, fp):
    """Header lines then one realized row ``a_1 ... a_d b`` per line."""
    fp.write("# robustgne-samples 1\n")
    fp.write(f"# kind={S.kind} K={S.K} seed={S.seed} N={S.N} n={S.n} "
             f"rows={S.A.shape[0]} dim={S.dim}\n")
    fmt = lambda v: format(float(v), ".17g")  # noqa: E731
    for r in range(S.A.shape[0]):
        fp.write(" ".join(fmt(v) for v in S.A[r]) + " " + fmt(S.b[r]) + "\n")


def dumps_samples(S):
    buf = io.StringIO()
    dump_samples(S, buf)
    return buf.getvalue()


def load_samples(fp):
    header = {}
    rows = []
    for line in fp:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    header[key] = val
            continue
        rows.append([float(v) for v in line.split()])
    kind = header["kind"]
    K, N, n, dim = (int(header[k]) for k in ("K", "N", "n", "dim"))
    seed = None if header.get("seed") in (None, "None") else int(header["seed"])
    data = np.array(rows, dtype=float).reshape(-1, dim + 1)
    A, b = data[:, :dim], data[:, dim]
    per = 2 * n if kind == BAND else 1
    if A.shape[0] != K * per:
        raise ValueError(f"expected {K * per} rows, found {A.shape[0]}")
    idx = np.repeat(np.arange(K), per)
    lo = hi = None
    if kind == BAND:
        blocks = b.reshape(K, 2 * n) if K else np.zeros((0, 2 * n))
        hi = blocks[:, :n].copy()
        lo = -blocks[:, n:]
    return SampleSet(kind, K, seed, N, n, A, b, idx, lo, hi)


def loads_samples(text):
    return load_samples(io.StringIO(text))
