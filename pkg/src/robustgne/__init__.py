"""Generalised Nash and Wardrop equilibria under sampled affine coupling
constraints, with constraint tightening and scenario certificates."""

from .certificates import (
    apriori_confidence,
    binom_tail,
    count_support_of_equilibrium,
    empirical_violation,
    eps_aposteriori,
    eps_required,
)
from .game import GameSpec, aggregate_game, evaluate_F, quadratic_game, vi_bundle
from .geometry import NormBall, Polytope, Region, facets_intersecting_ball, support_value
from .scenario import UncertaintyModel, build_domain, draw_multisample, reduce_to_aggregate
from .solver import MultiplierDomain, SolverConfig, run
from .tightening import permutation_of, selection_matrix, tightening_vector

__version__ = "0.1.0"
