"""
Monte-Carlo success-rate studies on the racing benchmark.

Every method is run from the same seeded initial conditions; outcomes are
aggregated into a SuccessTable with Wilson 95% intervals.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from tqdm import tqdm

from ..core.controllers import CBFConfig, CostSpec, MPPIConfig, PolicyHandle
from ..core.errors import ConfigError, ContractViolationError, MissingCertificateError
from ..core.global_certifier import GlobalCertificate
from ..core.hierarchy_switcher import (OUTCOME_COLLISION, OUTCOME_LOST, OUTCOME_SUCCESS, OUTCOME_TIMEOUT,
                                       EpisodeConfig, EpisodeLog, HierarchicalController, MPPIController,
                                       PlannerSpec, PolicyController, run_episode)
from ..core.local_refiner import RefineConfig
from ..core.reach_measure import RacingSpec, RewardConstraintSpec
from ..core.systems import SystemSpec

logger = logging.getLogger(__name__)

METHODS = (
    "hybrid",
    "mppi-cbf",
    "mppi-soft",
    "surrogate-cbf",
    "hybrid-ablation-mppi",
    "mppi-plain",
    "mppi-warmstart",
    "policy-only",
)
CERTIFIED_METHODS = ("hybrid", "hybrid-ablation-mppi")
BASELINES = tuple(m for m in METHODS if m != "hybrid")

SUCCESS_TABLE_COLUMNS = (
    "method", "trials", "success_count", "collision_count", "lost_count", "timeout_count",
    "success_fraction", "ci_low", "ci_high",
)


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class ExperimentConfig:
    """One method, one initial-condition box, one root seed."""
    method: str
    initial_low: Tuple[float, ...]
    initial_high: Tuple[float, ...]
    trials: int = 500
    max_steps: int = 300
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}', expected one of {METHODS}")
        if self.trials < 1:
            raise ConfigError(f"Trial count must be >= 1, got {self.trials}")
        if self.max_steps < 1:
            raise ConfigError(f"Episode length must be >= 1, got {self.max_steps}")
        if len(self.initial_low) != len(self.initial_high):
            raise ConfigError("Initial-condition box corners differ in dimension")
        if any(h < l for l, h in zip(self.initial_low, self.initial_high)):
            raise ConfigError("Initial-condition box needs high >= low")


@dataclass(frozen=True)
class SuccessTable:
    """Outcome counts of one method; counts sum to trials."""
    method: str
    trials: int
    success_count: int
    collision_count: int
    lost_count: int
    timeout_count: int

    def __post_init__(self):
        total = self.success_count + self.collision_count + self.lost_count + self.timeout_count
        if total != self.trials:
            raise ContractViolationError(f"Outcome counts sum to {total}, expected {self.trials}")

    @property
    def success_fraction(self) -> float:
        return self.success_count / self.trials if self.trials else 0.0

    @property
    def interval(self) -> Tuple[float, float]:
        return wilson_interval(self.success_count, self.trials)

    @classmethod
    def from_outcomes(cls, method: str, outcomes: Sequence[str]) -> "SuccessTable":
        outcomes = list(outcomes)
        return cls(
            method=method,
            trials=len(outcomes),
            success_count=outcomes.count(OUTCOME_SUCCESS),
            collision_count=outcomes.count(OUTCOME_COLLISION),
            lost_count=outcomes.count(OUTCOME_LOST),
            timeout_count=outcomes.count(OUTCOME_TIMEOUT),
        )

    def as_row(self) -> Dict[str, object]:
        low, high = self.interval
        return {
            "method": self.method,
            "trials": self.trials,
            "success_count": self.success_count,
            "collision_count": self.collision_count,
            "lost_count": self.lost_count,
            "timeout_count": self.timeout_count,
            "success_fraction": self.success_fraction,
            "ci_low": low,
            "ci_high": high,
        }


@dataclass(frozen=True, eq=False)
class RacingContext:
    """Everything a method needs to build its controller."""
    system: SystemSpec
    policy: PolicyHandle
    reach_spec: RewardConstraintSpec
    racing: RacingSpec
    cost_builder: Callable[[str], CostSpec]
    fast: MPPIConfig
    recovery: MPPIConfig
    baseline: MPPIConfig
    refine: RefineConfig
    cbf: CBFConfig
    certificate: Optional[GlobalCertificate] = None


def require_certificate(context: RacingContext, method: str) -> None:
    if method not in CERTIFIED_METHODS:
        return
    if context.certificate is None or context.certificate.certified_count == 0:
        raise MissingCertificateError(f"Method '{method}' needs a global certificate with certified nominals")


def build_controller(context: RacingContext, method: str, seed: int = 0):
    """Controller for a method identifier, seeded for one episode."""
    require_certificate(context, method)

    baseline_plain = PlannerSpec(replace(context.baseline, cost="plain-goal"), context.cost_builder("plain-goal"))
    baseline_soft = PlannerSpec(replace(context.baseline, cost="soft-constraint"),
                                context.cost_builder("soft-constraint"))

    if method in CERTIFIED_METHODS:
        return HierarchicalController(
            system=context.system,
            policy=context.policy,
            spec=context.reach_spec,
            certificate=context.certificate,
            refine=context.refine,
            fast=PlannerSpec(context.fast, context.cost_builder(context.fast.cost)),
            recovery=PlannerSpec(context.recovery, context.cost_builder("recovery")),
            seed=seed,
            certified_planner=baseline_soft if method == "hybrid-ablation-mppi" else None,
        )
    if method == "mppi-cbf":
        return MPPIController(context.system, baseline_plain, cbf=context.cbf, racing=context.racing,
                              seed=seed, name=method)
    if method == "mppi-soft":
        return MPPIController(context.system, baseline_soft, seed=seed, name=method)
    if method == "mppi-plain":
        return MPPIController(context.system, baseline_plain, seed=seed, name=method)
    if method == "mppi-warmstart":
        planner = PlannerSpec(replace(baseline_plain.config, warm_start="policy"), baseline_plain.cost)
        return MPPIController(context.system, planner, policy=context.policy, seed=seed, name=method)
    if method == "surrogate-cbf":
        return PolicyController(context.system, context.policy, cbf=context.cbf, racing=context.racing)
    return PolicyController(context.system, context.policy)


def sample_initial_conditions(cfg: ExperimentConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Initial states (trials, n) and per-trial controller seeds from the root seed."""
    rng = np.random.default_rng(cfg.seed)
    low = np.asarray(cfg.initial_low, dtype=np.float64)
    high = np.asarray(cfg.initial_high, dtype=np.float64)
    states = rng.uniform(low, high, size=(cfg.trials, low.size))
    seeds = rng.integers(0, 2 ** 31 - 1, size=cfg.trials)
    return states, seeds


def run_trial(context: RacingContext, method: str, x0: np.ndarray, seed: int, episode: EpisodeConfig) -> EpisodeLog:
    controller = build_controller(context, method, int(seed))
    return run_episode(controller, context.system, context.reach_spec, x0, episode, context.racing)


def run_trials(cfg: ExperimentConfig, context: RacingContext, show_progress: bool = False) -> List[EpisodeLog]:
    """Run every seeded episode of a study; trials are independent and run through joblib."""
    require_certificate(context, cfg.method)
    states, seeds = sample_initial_conditions(cfg)
    episode = EpisodeConfig(max_steps=cfg.max_steps, corridor_half_width=context.racing.corridor_half_width)
    logger.info(f"Running {cfg.trials} episodes of {cfg.method}")
    return Parallel(n_jobs=cfg.n_jobs)(
        delayed(run_trial)(context, cfg.method, x0, seed, episode)
        for x0, seed in tqdm(list(zip(states, seeds)), desc=cfg.method, disable=not show_progress)
    )


def run_study(cfg: ExperimentConfig, context: RacingContext, show_progress: bool = False) -> SuccessTable:
    logs = run_trials(cfg, context, show_progress)
    table = SuccessTable.from_outcomes(cfg.method, [log.outcome for log in logs])
    low, high = table.interval
    logger.info(f"{cfg.method}: success {table.success_fraction:.3f} [{low:.3f}, {high:.3f}] over {table.trials} trials")
    return table


def compare_methods(tables: Sequence[SuccessTable], reference: str = "hybrid") -> List[Dict[str, object]]:
    """Per-method comparison against the reference: dominance and interval separation."""
    by_method = {t.method: t for t in tables}
    if reference not in by_method:
        raise KeyError(f"No table for reference method '{reference}'")
    ref = by_method[reference]
    ref_low, _ = ref.interval
    rows = []
    for table in tables:
        if table.method == reference:
            continue
        _, high = table.interval
        rows.append({
            "method": table.method,
            "success_fraction": table.success_fraction,
            "reference_fraction": ref.success_fraction,
            "reference_dominates": ref.success_fraction >= table.success_fraction,
            "intervals_separated": ref_low > high,
        })
    return rows
