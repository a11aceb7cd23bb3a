"""The aggregative example: M-sweep and statistical validation.

Agents share a band constraint on the aggregate, lo <= sigma(x) <= hi,
with each of the K samples drawing its own band.  Because the Wardrop map
only depends on sigma, the problem is solved in aggregate space by
default, where the deviation ball B_1(x*, rho) becomes B_1(sigma*, rho/N).
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .certificates import (
    aposteriori_certificate,
    apriori_certificate,
    binom_tail,
    count_support_of_equilibrium,
    active_support_estimate,
    dimension_bound,
    empirical_violation,
    eps_required,
)
from .errors import RobustGNEError
from .game import WE, aggregate, aggregate_game, potential_value, quadratic_game, wardrop_potential
from .geometry import NormBall, Polytope, facets_intersecting_ball, merge_parallel_rows, normalize_rows
from .scenario import BAND, UncertaintyModel, build_domain, draw_multisample, lift_band_rows, reduce_to_aggregate
from .solver import SolverConfig, run

logger = logging.getLogger(__name__)

AGGREGATE = "aggregate"
FULL = "full"


@dataclass
class ExperimentPlan:
    # game
    N: int = 50
    n: int = 2
    C: tuple = ((1.0, 0.1), (0.1, 1.5))
    d: tuple = (-4.0, -4.0)
    lower: float = 0.0
    upper: float = 3.5
    map_kind: str = WE
    # uncertainty
    law: str = "uniform"
    lower_nominal: float = 0.0
    upper_nominal: float = 1.0
    spread: float = 0.2
    coupling: str = "independent"
    # scenario and certificates
    K: int = 50
    beta: float = 0.05
    eps_bar: Optional[float] = None
    aggregate_bound: bool = True
    support: str = "leave-one-out"  # leave-one-out | active | none
    # solver
    rho: float = 10.0
    zeta: float = 0.05
    norm_order: float = 1
    tau_mode: str = "subdomain"
    tau: Optional[float] = None
    tau_safety: float = 0.9
    c: Optional[float] = None
    cap: float = 1e6
    xi: float = 1e-8
    max_iter: int = 200_000
    exhaustive_projection: bool = False
    space: str = AGGREGATE
    # sweep
    M_values: tuple = (0, 1, 2)
    trials: int = 20
    n_fresh: int = 10_000
    seed: int = 0
    trace: bool = False

    def __post_init__(self):
        if not self.M_values:
            raise ValueError("M_values must not be empty")
        if any(M < 0 for M in self.M_values):
            raise ValueError("M values must be nonnegative")
        if self.trials < 1 or self.K < 1 or self.n_fresh < 1:
            raise ValueError("trials, K and n_fresh must be positive")
        if self.space not in (AGGREGATE, FULL):
            raise ValueError(f"space must be {AGGREGATE!r} or {FULL!r}")
        if self.support not in ("leave-one-out", "active", "none"):
            raise ValueError(f"unknown support mode {self.support!r}")

    def game(self):
        return quadratic_game(self.N, self.n, np.array(self.C), np.array(self.d),
                              self.lower, self.upper, self.map_kind)

    def model(self, seed=0):
        return UncertaintyModel(BAND, seed=seed, N=self.N, n=self.n, law=self.law,
                                lower_nominal=self.lower_nominal,
                                upper_nominal=self.upper_nominal, spread=self.spread,
                                coupling=self.coupling)

    def trial_seeds(self):
        """(sample seed, fresh seed) per trial, spawned from the plan seed."""
        children = np.random.SeedSequence(self.seed).spawn(self.trials)
        return [tuple(int(v) for v in ch.generate_state(2)) for ch in children]

    def facet_margin(self):
        return max(10 * self.xi, 1e-6)

    def to_dict(self):
        out = asdict(self)
        out["C"] = [list(map(float, r)) for r in self.C]
        out["d"] = list(map(float, self.d))
        out["M_values"] = list(self.M_values)
        if self.norm_order == math.inf:
            out["norm_order"] = "inf"
        return out


@dataclass
class ExperimentReport:
    plan: dict
    rows: list
    summary: list
    traces: dict = field(default_factory=dict)
    campaign: Optional[list] = None
    runtime: dict = field(default_factory=dict)

    def payload(self):
        """Everything except runtime metadata (the replayable part)."""
        out = {"plan": self.plan, "rows": self.rows, "summary": self.summary,
               "traces": self.traces}
        if self.campaign is not None:
            out["campaign"] = self.campaign
        return out

    def to_dict(self):
        out = self.payload()
        out["runtime"] = self.runtime
        return out


def aggregate_radius(rho, N, norm_order):
    """Radius of the image of B_p(x, rho) under the averaging map."""
    return rho if norm_order == math.inf else rho / N ** (1.0 / norm_order)


class Pipeline:
    """Deterministic multisample -> equilibrium map.

    ``space`` is "aggregate" (band constraints on a Wardrop game, solved on
    sigma) or "full" (stacked decision vector).
    """

    def __init__(self, game_full, space, solver_kwargs):
        self.game_full = game_full
        self.space = space
        self.solver_kwargs = dict(solver_kwargs)
        self.game = aggregate_game(game_full) if space == AGGREGATE else game_full
        rho = self.solver_kwargs.pop("rho")
        p = self.solver_kwargs.get("norm_order", 2)
        self.radius = aggregate_radius(rho, game_full.N, p) if space == AGGREGATE else rho

    @classmethod
    def from_plan(cls, plan):
        kw = dict(rho=plan.rho, zeta=plan.zeta, tau=plan.tau, tau_mode=plan.tau_mode,
                  tau_safety=plan.tau_safety, c=plan.c, cap=plan.cap, xi=plan.xi, max_iter=plan.max_iter, norm_order=plan.norm_order,
                  exhaustive_projection=plan.exhaustive_projection)
        return cls(plan.game(), plan.space, kw)

    def domain(self, S):
        if self.space == AGGREGATE:
            return reduce_to_aggregate(self.game_full.lower, self.game_full.upper, S)
        return build_domain(self.game_full.box(), S)

    def key(self, S):
        """Cheap fingerprint of the domain (the tightest row per direction)."""
        if self.space == AGGREGATE:
            box = Polytope.from_box(self.game.x_lower, self.game.x_upper)
            A, b = lift_band_rows(S.lo, S.hi, 1)
        else:
            box = self.game_full.box()
            A, b = S.A, S.b
        P = normalize_rows(np.vstack([box.A, A]), np.concatenate([box.b, b]))
        P, _ = merge_parallel_rows(P)
        return P.A.tobytes() + P.b.tobytes()

    def config(self, M):
        return SolverConfig(rho=self.radius, M=M, **self.solver_kwargs)

    def solve(self, S, M, trace=False, y0=None):
        dom = self.domain(S)
        coupling = dom.coupling()
        if M > coupling.m:
            logger.warning("M=%d exceeds the %d sampled rows; clamped", M, coupling.m)
            M = coupling.m
        return dom, run(self.game, coupling, self.config(M), y0=y0, trace=trace)

    def equilibrium(self, S, M):
        return self.solve(S, M)[1].x

    def sigma(self, x):
        return x.copy() if self.space == AGGREGATE else aggregate(x, self.game_full.N, self.game_full.n)

    def full_profile(self, x):
        """Stacked decision vector (the symmetric profile in aggregate space)."""
        return np.tile(x, self.game_full.N) if self.space == AGGREGATE else x

    def facet_counts(self, dom, res, margin):
        """(open-ball facet rows, touching facet rows, open count incl. box rows)."""
        ball = NormBall(res.x, self.radius, res.region.ball.norm_order)
        rows = [int(r) for r in dom.coupling_rows]
        tol = 0.1 * margin
        facets = facets_intersecting_ball(dom.polytope, ball, tol=tol, margin=margin, rows=rows)
        touching = facets_intersecting_ball(dom.polytope, ball, tol=tol, rows=rows)
        with_box = facets_intersecting_ball(dom.polytope, ball, tol=tol, margin=margin)
        return facets, touching, with_box


def _evaluate(plan, pipe, S, M, fresh_seed, trace):
    dom, res = pipe.solve(S, M, trace=trace)
    sigma = pipe.sigma(res.x)
    margin = plan.facet_margin()
    facets, touching, facets_all = pipe.facet_counts(dom, res, margin)
    # E and the Wardrop potential are evaluated on the symmetric profile in
    # aggregate space, where they coincide with the full-space values
    game = pipe.game_full
    x_full = pipe.full_profile(res.x)
    d = dimension_bound(plan.n, M, plan.N, plan.aggregate_bound)
    eps_bar = plan.eps_bar if plan.eps_bar is not None else eps_required(d, plan.K, plan.beta)
    prior = apriori_certificate(d, plan.K, eps_bar, M=M)
    post = None
    s_star, support_idx = None, None
    if plan.support == "leave-one-out":
        s_star, support_idx = count_support_of_equilibrium(
            lambda Sp: pipe.equilibrium(Sp, M), S, res.x, key=pipe.key)
    elif plan.support == "active":
        cp = dom.coupling()
        s_star, support_idx = active_support_estimate(res.x, cp.A, cp.b, dom.coupling_origin(),
                                                      tol=margin)
    if s_star is not None:
        post = aposteriori_certificate(s_star, len(facets), plan.K, plan.beta,
                                       heuristic=plan.support == "active")
    viol = empirical_violation(res.region, plan.model(), plan.n_fresh, fresh_seed)
    row = {
        "M": int(M),
        "sigma_star": [float(v) for v in sigma],
        "mu_star": [float(v) for v in res.mu],
        "potential": potential_value(game, x_full),
        "wardrop_potential": wardrop_potential(game, x_full),
        "facets": len(facets),
        "facets_touching": len(touching),
        "facets_with_box": len(facets_all),
        "facet_rows": facets,
        "s_star": s_star,
        "support_samples": support_idx,
        "eps": post.epsilon if post else None,
        "eps_bar": eps_bar,
        "confidence": prior.confidence,
        "d": d,
        "empirical_violation": viol,
        "iterations": res.iterations,
        "converged": bool(res.converged),
        "gap_trapped": list(res.gap_trapped),
        "residual": res.step_norm,
        "fixed_point_residual": res.fixed_point_residual,
        "tau": res.tau,
        "mask": [int(v) for v in res.mask],
        "certificates": [prior.to_dict()] + ([post.to_dict()] if post else []),
    }
    tr = None
    if trace and res.trace is not None:
        tr = [potential_value(game, pipe.full_profile(x)) for _, x, _, _, _ in res.trace]
    return row, tr


def run_example(plan):
    """Solve every trial of the plan for every M in the sweep."""
    t0 = time.perf_counter()
    pipe = Pipeline.from_plan(plan)
    rows, traces = [], {}
    for t, (sample_seed, fresh_seed) in enumerate(plan.trial_seeds()):
        S = draw_multisample(plan.model(sample_seed), plan.K)
        for M in plan.M_values:
            want_trace = plan.trace and t == 0
            try:
                row, tr = _evaluate(plan, pipe, S, M, fresh_seed, want_trace)
            except RobustGNEError as exc:
                logger.warning("trial %d, M=%d failed: %s", t, M, exc)
                row, tr = {"M": int(M), "error": f"{type(exc).__name__}: {exc}"}, None
            row.update(trial=t, sample_seed=sample_seed, fresh_seed=fresh_seed)
            rows.append(row)
            if tr is not None:
                traces[str(M)] = tr
    summary = _summarize(plan, rows)
    runtime = {"seconds": time.perf_counter() - t0}
    return ExperimentReport(plan.to_dict(), rows, summary, traces, runtime=runtime)


def _summarize(plan, rows):
    out = []
    for M in plan.M_values:
        ok = [r for r in rows if r["M"] == M and "error" not in r]
        if not ok:
            out.append({"M": int(M), "trials": 0})
            continue
        out.append({
            "M": int(M),
            "trials": len(ok),
            "failures": sum(1 for r in rows if r["M"] == M and "error" in r),
            "max_facets": max(r["facets"] for r in ok),
            "mean_potential": float(np.mean([r["potential"] for r in ok])),
            "mean_empirical_violation": float(np.mean([r["empirical_violation"] for r in ok])),
            "all_converged": all(r["converged"] for r in ok),
        })
    return out


def run_validation_campaign(plan):
    """Fraction of trials whose region violates more than eps_bar.

    Compared against the a priori budget binom_tail(d, K, eps_bar) and its
    3-sigma binomial allowance.
    """
    if plan.trials < 50:
        logger.warning("validation campaigns are meant for at least 50 trials (got %d)", plan.trials)
    report = run_example(replace(plan, trace=False))
    campaign = []
    for M in plan.M_values:
        ok = [r for r in report.rows if r["M"] == M and "error" not in r]
        d = dimension_bound(plan.n, M, plan.N, plan.aggregate_bound)
        eps_bar = plan.eps_bar if plan.eps_bar is not None else eps_required(d, plan.K, plan.beta)
        budget = binom_tail(d, plan.K, eps_bar) if d <= plan.K else 1.0
        T = len(ok)
        violating = sum(1 for r in ok if r["empirical_violation"] > eps_bar)
        frac = violating / T if T else math.nan
        allowance = budget + 3 * math.sqrt(budget * (1 - budget) / T) if T else math.nan
        campaign.append({
            "M": int(M), "d": d, "K": plan.K, "eps_bar": eps_bar, "budget": budget,
            "trials": T, "violating": violating, "fraction": frac,
            "allowance": allowance, "within_allowance": bool(frac <= allowance),
        })
    report.campaign = campaign
    return report


PER_TRIAL_FIXED = ("potential", "facets", "s_star", "eps", "confidence", "empirical_violation")
PER_TRIAL_EXTRA = ("eps_bar", "facets_touching", "wardrop_potential", "iterations", "converged")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def per_trial_rows(plan, report):
    """Header and rows of per_trial.csv."""
    header = (["trial", "M"] + [f"sigma_star_{j + 1}" for j in range(plan.n)]
              + list(PER_TRIAL_FIXED) + list(PER_TRIAL_EXTRA))
    out = []
    for r in report.rows:
        sig = r.get("sigma_star", [None] * plan.n)
        vals = [r["trial"], r["M"]] + list(sig)
        vals += [r.get(k) for k in PER_TRIAL_FIXED + PER_TRIAL_EXTRA]
        out.append([_fmt(v) for v in vals])
    return header, out
