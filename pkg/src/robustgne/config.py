"""Run configuration: a YAML document validated by pydantic models.

Unknown keys are rejected at every level and ``schema_version`` must match.
``effective()`` returns the configuration with every default filled in,
which is what result documents embed.
"""

import math
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .game import GameSpec
from .scenario import BAND, UncertaintyModel

SCHEMA_VERSION = 1

Vector = Union[float, List[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GameSection(_Strict):
    N: int = Field(50, ge=1)
    n: int = Field(2, ge=1)
    C: List[List[float]] = [[1.0, 0.1], [0.1, 1.5]]
    d: List[float] = [-4.0, -4.0]
    lower: Vector = 0.0
    upper: Vector = 3.5
    map_kind: Literal["NE", "WE"] = "WE"


class UncertaintySection(_Strict):
    kind: Literal["aggregate-band", "generic-affine"] = BAND
    law: Literal["uniform", "gaussian"] = "uniform"
    lower_nominal: Vector = 0.0
    upper_nominal: Vector = 1.0
    spread: float = Field(0.2, ge=0)
    coupling: Literal["independent", "common"] = "independent"
    inverted: Literal["resample", "swap"] = "resample"
    direction_mean: Optional[List[float]] = None
    direction_scale: float = Field(0.0, ge=0)
    offset_mean: float = 0.0
    offset_scale: float = Field(0.0, ge=0)


class ScenarioSection(_Strict):
    K: int = Field(50, ge=1)
    seed: int = Field(0, ge=0)


class SolverSection(_Strict):
    rho: float = Field(10.0, gt=0)
    M: int = Field(2, ge=0)
    zeta: float = Field(0.05, gt=0)
    tau: Optional[float] = Field(None, gt=0)
    tau_mode: Literal["explicit", "subdomain", "from-bounds"] = "subdomain"
    tau_safety: float = Field(0.9, gt=0, lt=1)
    xi: float = Field(1e-8, gt=0)
    max_iter: int = Field(200_000, ge=1)
    norm_order: Literal[1, 2, "inf"] = 1
    c: Optional[float] = Field(None, gt=0)
    cap: float = Field(1e6, gt=0)
    exhaustive_projection: bool = False
    space: Literal["auto", "aggregate", "full"] = "auto"

    @model_validator(mode="after")
    def _tau(self):
        if self.tau_mode == "explicit" and self.tau is None:
            raise ValueError("tau_mode 'explicit' needs tau")
        return self

    @property
    def p(self):
        return math.inf if self.norm_order == "inf" else int(self.norm_order)


class CertificateSection(_Strict):
    beta: float = Field(0.05, gt=0, lt=1)
    eps_bar: Optional[float] = Field(None, ge=0, le=1)
    aggregate_bound: bool = True
    support: Literal["leave-one-out", "active", "none"] = "leave-one-out"


class ExperimentSection(_Strict):
    M_values: List[int] = [0, 1, 2]
    trials: int = Field(20, ge=1)
    n_fresh: int = Field(10_000, ge=1)
    seed: int = Field(0, ge=0)

    @field_validator("M_values")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("M_values must list at least one value")
        if any(M < 0 for M in v):
            raise ValueError("M values must be nonnegative")
        return v


class OutputSection(_Strict):
    dir: str = "out"
    trace: bool = False


class RunConfig(_Strict):
    schema_version: int
    game: GameSection = GameSection()
    uncertainty: UncertaintySection = UncertaintySection()
    scenario: ScenarioSection = ScenarioSection()
    solver: SolverSection = SolverSection()
    certificate: CertificateSection = CertificateSection()
    experiment: ExperimentSection = ExperimentSection()
    output: OutputSection = OutputSection()

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v} (expected {SCHEMA_VERSION})")
        return v

    # -- builders ----------------------------------------------------------

    def build_game(self):
        g = self.game
        return GameSpec(N=g.N, n=g.n, lower=np.asarray(g.lower, dtype=float),
                        upper=np.asarray(g.upper, dtype=float), C=np.array(g.C, dtype=float),
                        d=np.array(g.d, dtype=float), map_kind=g.map_kind)

    def build_model(self, seed=None):
        u = self.uncertainty
        seed = self.scenario.seed if seed is None else seed
        kw = dict(kind=u.kind, seed=seed, N=self.game.N, n=self.game.n, law=u.law)
        if u.kind == BAND:
            kw.update(lower_nominal=np.asarray(u.lower_nominal, dtype=float),
                      upper_nominal=np.asarray(u.upper_nominal, dtype=float),
                      spread=u.spread, coupling=u.coupling, inverted=u.inverted)
        else:
            kw.update(direction_mean=None if u.direction_mean is None else np.array(u.direction_mean),
                      direction_scale=u.direction_scale, offset_mean=u.offset_mean,
                      offset_scale=u.offset_scale)
        return UncertaintyModel(**kw)

    def space(self):
        s = self.solver.space
        band_we = self.uncertainty.kind == BAND and self.game.map_kind == "WE"
        if s == "auto":
            return "aggregate" if band_we else "full"
        if s == "aggregate" and not band_we:
            raise ConfigError("aggregate space needs band constraints and the Wardrop map")
        return s

    def solver_kwargs(self):
        s = self.solver
        return dict(rho=s.rho, zeta=s.zeta, tau=s.tau, tau_mode=s.tau_mode, tau_safety=s.tau_safety,
                    xi=s.xi, max_iter=s.max_iter, norm_order=s.p, c=s.c, cap=s.cap,
                    exhaustive_projection=s.exhaustive_projection)

    def build_plan(self):
        from .experiment import ExperimentPlan

        if self.uncertainty.kind != BAND:
            raise ConfigError("experiments need the aggregate-band uncertainty model")
        g, u, s, c, e = self.game, self.uncertainty, self.solver, self.certificate, self.experiment
        return ExperimentPlan(
            N=g.N, n=g.n, C=tuple(map(tuple, g.C)), d=tuple(g.d), lower=g.lower, upper=g.upper,
            map_kind=g.map_kind, law=u.law, lower_nominal=u.lower_nominal,
            upper_nominal=u.upper_nominal, spread=u.spread, coupling=u.coupling,
            K=self.scenario.K, beta=c.beta, eps_bar=c.eps_bar, aggregate_bound=c.aggregate_bound,
            support=c.support, rho=s.rho, zeta=s.zeta, norm_order=s.p, tau_mode=s.tau_mode,
            tau=s.tau, tau_safety=s.tau_safety, c=s.c, cap=s.cap, xi=s.xi, max_iter=s.max_iter,
            exhaustive_projection=s.exhaustive_projection,
            space=self.space(), M_values=tuple(e.M_values), trials=e.trials, n_fresh=e.n_fresh,
            seed=e.seed, trace=self.output.trace)

    def effective(self):
        return self.model_dump(mode="json")


def parse_config(data):
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return parse_config(data)
