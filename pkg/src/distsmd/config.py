"""Versioned experiment configuration, presets and scenario construction."""
from __future__ import annotations

import hashlib
import json
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .estimators import make_schedule
from .network import FIG3_EDGE_COUNTS

SCHEMA_VERSION = 1

ESTIMATORS = ("centralized", "distributed", "marginal", "bp", "circular-bp")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LocalizationParams(_Strict):
    kind: Literal["localization"] = "localization"
    n_agents: int = Field(8, ge=2)
    topology: str = "ring"
    b: float = Field(1.0, gt=0)
    edge_fraction: float = Field(1.0, gt=0, le=1)
    weighting: Literal["sinkhorn", "metropolis"] = "sinkhorn"
    topology_seed: Optional[int] = None
    bp_self: Literal["belief", "prior"] = "belief"


class MappingParams(_Strict):
    kind: Literal["mapping"] = "mapping"
    robots: int = Field(3, ge=1)
    n_centers: int = Field(60, ge=1)
    threshold: Optional[float] = Field(None, gt=0)
    target_ownership: Optional[float] = Field(None, gt=0, le=1)
    w0: float = 1.5
    batch: int = Field(1, ge=1)
    n_verify: int = Field(200, ge=1)


class GridParams(_Strict):
    kind: Literal["grid"] = "grid"
    n_points: int = Field(11, ge=3)
    sensors_per_agent: int = Field(8, ge=1)
    eps: float = Field(0.02, gt=0, lt=0.5)
    sharpness: float = Field(8.0, gt=0)


ScenarioParams = Annotated[Union[LocalizationParams, MappingParams, GridParams],
                           Field(discriminator="kind")]


class EstimatorBlock(_Strict):
    kind: str = "marginal"
    schedule: str = "const:1"
    alpha: float = Field(0.8, gt=0, le=1)

    @field_validator("kind")
    @classmethod
    def _known_kind(cls, v):
        if v not in ESTIMATORS:
            raise ValueError(f"unknown estimator {v!r}; choose from {ESTIMATORS}")
        return v

    @field_validator("schedule")
    @classmethod
    def _parses(cls, v):
        make_schedule(v)
        return v


class RunBlock(_Strict):
    rounds: int = Field(..., ge=0)
    seed: int = Field(0, ge=0)
    cadence: int = Field(1, ge=1)
    out: str = "runs"


class SweepBlock(_Strict):
    """Cartesian sweep; empty lists keep the base config's value."""

    b: list[float] = Field(default_factory=list)
    topology: list[str] = Field(default_factory=list)
    estimator: list[str] = Field(default_factory=list)
    seeds: list[int] = Field(default_factory=list)

    @field_validator("estimator")
    @classmethod
    def _known(cls, v):
        bad = [e for e in v if e not in ESTIMATORS]
        if bad:
            raise ValueError(f"unknown estimators {bad}")
        return v


class ExperimentConfig(_Strict):
    version: Literal[1] = SCHEMA_VERSION
    name: str = "custom"
    scenario: ScenarioParams
    estimator: EstimatorBlock = EstimatorBlock()
    run: RunBlock
    sweep: Optional[SweepBlock] = None

    @model_validator(mode="after")
    def _consistent(self):
        kinds = {"localization": ESTIMATORS, "mapping": ESTIMATORS[:3], "grid": ESTIMATORS[:3]}
        allowed = kinds[self.scenario.kind]
        requested = [self.estimator.kind] + (self.sweep.estimator if self.sweep else [])
        for e in requested:
            if e not in allowed:
                raise ValueError(f"estimator {e!r} is not available for {self.scenario.kind} scenarios")
        if self.sweep and (self.sweep.b or self.sweep.topology) and self.scenario.kind != "localization":
            raise ValueError("b/topology sweeps apply to localization scenarios only")
        return self

    def expand(self):
        """Individual run configs of the sweep (or just this one)."""
        if self.sweep is None:
            return [self]
        sw = self.sweep
        scen = self.scenario
        out = []
        for b in sw.b or [getattr(scen, "b", None)]:
            for topo in sw.topology or [getattr(scen, "topology", None)]:
                for est in sw.estimator or [self.estimator.kind]:
                    for seed in sw.seeds or [self.run.seed]:
                        s = scen if scen.kind != "localization" else scen.model_copy(
                            update={"b": b, "topology": topo})
                        out.append(self.model_copy(update={
                            "scenario": s, "sweep": None,
                            "estimator": self.estimator.model_copy(update={"kind": est}),
                            "run": self.run.model_copy(update={"seed": seed})}))
        return out

    def run_name(self):
        s = self.scenario
        parts = [s.kind]
        if s.kind == "localization":
            parts += [f"b{s.b:g}", s.topology.replace(":", "")]
        parts += [self.estimator.kind, f"s{self.run.seed}"]
        return "_".join(parts)


def config_hash(config):
    """Hash of every field that changes results (the output directory does not)."""
    data = config.model_dump(mode="json")
    data["run"].pop("out", None)
    data.pop("name", None)
    text = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def load_config(path):
    with open(path) as fh:
        return ExperimentConfig.model_validate_json(fh.read())


PRESETS = {
    "localization-fig2": {
        "name": "localization-fig2",
        "scenario": {"kind": "localization", "n_agents": 8, "topology": "ring", "b": 1.0},
        "estimator": {"kind": "marginal", "schedule": "const:1", "alpha": 0.8},
        "run": {"rounds": 1600, "seed": 7},
    },
    "localization-fig3-sweep": {
        "name": "localization-fig3-sweep",
        "scenario": {"kind": "localization", "n_agents": 8, "topology": "edges:7", "b": 1.0},
        "estimator": {"kind": "marginal", "schedule": "const:1", "alpha": 0.8},
        "run": {"rounds": 500, "seed": 0},
        "sweep": {"b": [1.0, 2.0, 5.0, 10.0],
                  "topology": [f"edges:{m}" for m in FIG3_EDGE_COUNTS],
                  "estimator": ["distributed", "marginal", "bp", "circular-bp"]},
    },
    "mapping-desk": {
        "name": "mapping-desk",
        "scenario": {"kind": "mapping", "robots": 3, "n_centers": 60},
        "estimator": {"kind": "marginal", "schedule": "const:1"},
        "run": {"rounds": 20000, "seed": 0, "cadence": 100},
    },
}


def preset(name, **overrides):
    """A built-in preset, with optional top-level block overrides merged in."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    data = json.loads(json.dumps(PRESETS[name]))
    for block, values in overrides.items():
        if isinstance(values, dict) and isinstance(data.get(block), dict):
            data[block].update(values)
        else:
            data[block] = values
    return ExperimentConfig.model_validate(data)


def build_scenario(config):
    """Scenario object for one (non-sweep) config."""
    from .scenarios.grid_problem import two_agent_problem
    from .scenarios.localization import build_localization
    from .scenarios.mapping import build_mapping

    s, seed = config.scenario, config.run.seed
    if s.kind == "localization":
        return build_localization(n=s.n_agents, topology=s.topology, b=s.b, seed=seed,
                                  edge_fraction=s.edge_fraction, bp_alpha=config.estimator.alpha,
                                  weighting=s.weighting, topology_seed=s.topology_seed,
                                  bp_self=s.bp_self)
    if s.kind == "mapping":
        return build_mapping(robots=s.robots, n_centers=s.n_centers, threshold=s.threshold, seed=seed,
                             w0=s.w0, target_ownership=s.target_ownership, batch=s.batch,
                             n_verify=s.n_verify)
    return two_agent_problem(seed=seed, n_points=s.n_points, sensors_per_agent=s.sensors_per_agent,
                             eps=s.eps, sharpness=s.sharpness)
