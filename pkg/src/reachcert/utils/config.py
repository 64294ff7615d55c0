"""
YAML configuration loading and validation.

Config files live under config/ (development.yaml, production.yaml, oracle.yaml).
Each top-level section maps to a pydantic model; anything out of range is
reported as a ConfigError carrying the validation message.
"""

import logging
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.errors import ConfigError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

METHOD_IDS = (
    "hybrid", "mppi-cbf", "mppi-soft", "surrogate-cbf",
    "hybrid-ablation-mppi", "mppi-plain", "mppi-warmstart", "policy-only",
)


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BenchmarkSection(Section):
    name: Literal["racing", "lowdim"] = "racing"
    seed: int = 0


class SystemSection(Section):
    dt: float = Field(0.1, gt=0)
    control_bound: float = Field(1.0, gt=0)


class OpponentSection(Section):
    q_pos: float = Field(1.0, gt=0)
    q_vel: float = Field(0.1, gt=0)
    r: float = Field(0.01, gt=0)
    goal: List[float] = [0.0, 0.0, 2.0, 0.0, 0.0, 0.0]
    clamp: float = Field(1.0, gt=0)

    @field_validator("goal")
    @classmethod
    def _six_entries(cls, value):
        if len(value) != 6:
            raise ValueError("opponent goal needs 6 entries [px, vx, py, vy, pz, vz]")
        return value


class RacingSection(Section):
    corridor_half_width: float = Field(0.3, gt=0)
    gate_margin: float = Field(0.05, gt=0)
    downwash_scale: float = Field(0.2, gt=0)
    position_lead: float = Field(0.0, ge=0)
    velocity_lead: float = Field(0.0, ge=0)
    downwash_cap: float = Field(2.0, gt=0)
    gate_width: float = Field(0.6, gt=0)
    gate_height: float = Field(0.6, gt=0)
    position_low: List[float] = [-1.5, -4.0, -1.0]
    position_high: List[float] = [1.5, 1.0, 1.0]


class EgoPolicySection(Section):
    q_pos: float = Field(1.0, gt=0)
    q_vel: float = Field(0.1, gt=0)
    r: float = Field(0.1, gt=0)
    waypoint_lead: float = 1.0
    velocity_lead: float = 0.5
    cruise_speed: float = Field(0.0, ge=0)
    repulsion_gain: float = Field(2.0, ge=0)
    activation: float = Field(0.3, gt=0)


class LowdimSection(Section):
    target_low: float = 0.5
    target_high: float = 1.0
    velocity_tolerance: float = Field(0.5, gt=0)
    obstacle_low: float = 1.3
    obstacle_high: float = 1.8
    kp: float = Field(2.0, gt=0)
    kd: float = Field(2.0, gt=0)


class ScenarioSection(Section):
    epsilon: float = Field(0.1, gt=0, lt=1)
    beta: float = Field(0.001, gt=0, lt=1)
    decision_dim: int = Field(1, ge=1)
    eps_x: float = Field(0.1, ge=0)
    horizon: int = Field(20, ge=1)
    seed: int = 0
    # None: number of pairs from the sample-complexity bound
    pairs: Optional[int] = Field(None, ge=1)


class ReductionSection(Section):
    matrix: List[List[float]]
    free: List[int]
    reference: List[float]
    labels: List[str] = []


class CertificateSection(Section):
    gamma: float = Field(0.99, gt=0, lt=1)
    spacing: float = Field(0.2, gt=0)
    domain_low: List[float]
    domain_high: List[float]
    method: Literal["grid", "sobol"] = "grid"
    max_points: int = Field(200_000, ge=1)
    batch_size: int = Field(4096, ge=1)
    componentwise: bool = True
    reduction: Optional[ReductionSection] = None

    @model_validator(mode="after")
    def _domain(self):
        if len(self.domain_low) != len(self.domain_high):
            raise ValueError("certificate domain corners differ in dimension")
        if any(h < l for l, h in zip(self.domain_low, self.domain_high)):
            raise ValueError("certificate domain needs high >= low")
        return self


class RefineSection(Section):
    # None: sample count from the sample-complexity bound
    samples: Optional[int] = Field(None, ge=1)
    max_radius: float = Field(0.5, gt=0)
    max_iterations: int = Field(10, ge=1)
    horizon: Optional[int] = Field(None, ge=1)
    min_radius: float = Field(1e-3, ge=0)
    seed: int = 0


class MPPISection(Section):
    horizon: int = Field(20, ge=1)
    samples: int = Field(256, ge=1)
    temperature: float = Field(1.0, ge=0)
    noise_std: Union[float, List[float]] = 0.3
    cost: Literal["fast-goal", "recovery", "soft-constraint", "plain-goal"] = "fast-goal"
    warm_start: Literal["none", "policy", "previous"] = "previous"
    seed: int = 0


class MPPIGroup(Section):
    fast: MPPISection = MPPISection(cost="fast-goal", warm_start="previous")
    recovery: MPPISection = MPPISection(cost="recovery", warm_start="policy")
    baseline: MPPISection = MPPISection(cost="plain-goal", warm_start="previous")


class CostSection(Section):
    gate_goal: List[float] = [0.0, 1.0, 0.0]
    forward_speed: float = 1.0
    position_weight: float = Field(1.0, ge=0)
    velocity_weight: float = Field(0.1, ge=0)
    control_weight: float = Field(0.01, ge=0)
    target_weight: float = Field(10.0, ge=0)
    penalty_weight: float = Field(50.0, ge=0)
    barrier_weight: float = Field(1000.0, ge=0)


class CBFSection(Section):
    alpha: float = Field(1.0, gt=0)
    lookahead: int = Field(2, ge=1)
    gate_walls: bool = True
    grid_points: int = Field(11, ge=2)


class ExperimentSection(Section):
    methods: List[str] = list(METHOD_IDS)
    trials: int = Field(500, ge=1)
    max_steps: int = Field(300, ge=1)
    seed: int = 0
    n_jobs: int = 1
    # [px_e, vx_e, py_e, vy_e, pz_e, vz_e, px_o, vx_o, py_o, vy_o, pz_o, vz_o]
    initial_low: List[float] = [-0.3, 0.0, -3.0, 0.6, -0.1, 0.0, 0.5, 0.0, -2.6, 0.2, -0.1, 0.0]
    initial_high: List[float] = [0.3, 0.0, -2.6, 1.0, 0.1, 0.0, 0.8, 0.0, -2.2, 0.4, 0.1, 0.0]
    output_dir: str = "results"

    @field_validator("methods")
    @classmethod
    def _known_methods(cls, value):
        unknown = [m for m in value if m not in METHOD_IDS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; expected a subset of {list(METHOD_IDS)}")
        return value


class OracleSection(Section):
    horizon: int = Field(8, ge=1)
    levels: int = Field(3, ge=2)
    budget: int = Field(200_000, ge=1)
    low: List[float] = [0.0, -1.5]
    high: List[float] = [2.0, 1.5]
    resolution: List[int] = [41, 31]
    fresh_samples: int = Field(10_000, ge=1)
    repetitions: int = Field(200, ge=1)
    calibration_repetitions: int = Field(200, ge=1)
    n_jobs: int = 1


class LoggingSection(Section):
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_dir: str = "logs"


class ReachCertConfig(Section):
    """Root configuration document."""
    benchmark: BenchmarkSection = BenchmarkSection()
    system: SystemSection = SystemSection()
    opponent: OpponentSection = OpponentSection()
    racing: RacingSection = RacingSection()
    ego_policy: EgoPolicySection = EgoPolicySection()
    lowdim: LowdimSection = LowdimSection()
    scenario: ScenarioSection = ScenarioSection()
    certificate: CertificateSection
    refine: RefineSection = RefineSection()
    mppi: MPPIGroup = MPPIGroup()
    cost: CostSection = CostSection()
    cbf: CBFSection = CBFSection()
    experiment: ExperimentSection = ExperimentSection()
    oracle: OracleSection = OracleSection()
    logging: LoggingSection = LoggingSection()


def parse_config(data: dict) -> ReachCertConfig:
    try:
        return ReachCertConfig.model_validate(data or {})
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def load_config(path: Union[str, Path]) -> ReachCertConfig:
    """Read and validate a YAML configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Could not parse {path}: {e}") from e
    config = parse_config(data)
    logger.info(f"Loaded {config.benchmark.name} configuration from {path}")
    return config


def setup_logging(section: LoggingSection = LoggingSection()) -> None:
    logging.basicConfig(level=getattr(logging, section.level), format=LOG_FORMAT)
