"""
Four-tier priority switching between target maintenance, the certified policy
(global or local certificate) and safe-set recovery, plus the closed-loop
episode driver used by the racing experiments.

Tier 0: the state is in the target set         -> target-maintenance MPPI
Tier 1: the state is in the global certificate -> policy
Tier 2: a local certificate contains the state -> policy
Tier 3: otherwise                              -> recovery MPPI warm-started by the policy
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .controllers import (CBFConfig, CostSpec, MPPIConfig, PolicyHandle, certified_distance, cbf_filter,
                          mppi_plan, shift_warm_start, unroll_policy)
from .errors import (CertificatePolicyMismatchError, ContractViolationError, MissingCertificateError,
                     NoBoundaryPointsError)
from .global_certifier import GlobalCertificate, distance_to_certified, is_member, nearest_boundary_index
from .local_refiner import LocalCertificate, LocalCertificateCache, RefineConfig, iterative_growth, local_member
from .reach_measure import RacingSpec, RewardConstraintSpec, gate_aware_constraint
from .systems import SystemSpec, compose_control, step

logger = logging.getLogger(__name__)

TIER_TARGET = 0
TIER_GLOBAL = 1
TIER_LOCAL = 2
TIER_RECOVERY = 3

OUTCOME_SUCCESS = "success"
OUTCOME_COLLISION = "collision"
OUTCOME_LOST = "lost"
OUTCOME_TIMEOUT = "timeout"
OUTCOMES = (OUTCOME_SUCCESS, OUTCOME_COLLISION, OUTCOME_LOST, OUTCOME_TIMEOUT)


@dataclass(frozen=True, eq=False)
class TierDecision:
    """Fired tier (None for non-switching controllers), the control and why."""
    tier: Optional[int]
    control: np.ndarray
    local_certificate: Optional[LocalCertificate] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PlannerSpec:
    """An MPPI configuration paired with its cost."""
    config: MPPIConfig
    cost: CostSpec


class HierarchicalController:
    """
    Per-episode switching controller.

    Holds the mutable episode state: MPPI warm starts, the local certificate cache
    and the noise generator. One instance drives one episode at a time.
    """

    def __init__(self, system: SystemSpec, policy: PolicyHandle, spec: RewardConstraintSpec,
                 certificate: GlobalCertificate, refine: RefineConfig, fast: PlannerSpec,
                 recovery: PlannerSpec, seed: int = 0, certified_planner: Optional[PlannerSpec] = None):
        if certificate.policy_id != policy.policy_id:
            raise CertificatePolicyMismatchError(
                f"Certificate built for '{certificate.policy_id}' cannot certify '{policy.policy_id}'")
        if certificate.certified_count == 0:
            raise MissingCertificateError("Switching control needs a certificate with at least one certified nominal")
        self.system = system
        self.policy = policy
        self.spec = spec
        self.certificate = certificate
        self.refine = refine
        self.fast = fast
        self.recovery = recovery
        self.certified_planner = certified_planner
        self.seed = seed
        self.reset(seed)

    @property
    def name(self) -> str:
        return "hybrid-ablation-mppi" if self.certified_planner is not None else "hybrid"

    def reset(self, seed: Optional[int] = None) -> None:
        self.seed = self.seed if seed is None else seed
        self._rng = np.random.default_rng(self.seed)
        self._fast_warm: Optional[np.ndarray] = None
        self._ablation_warm: Optional[np.ndarray] = None
        self.cache = LocalCertificateCache(self.certificate.eps_x)

    def _certified_control(self, x: np.ndarray) -> np.ndarray:
        if self.certified_planner is None:
            return self.policy.evaluate(x)
        result = mppi_plan(self.certified_planner.config, self.certified_planner.cost, self.system, x,
                           self._ablation_warm, self._rng)
        self._ablation_warm = shift_warm_start(result.sequence)
        return result.control

    def _local_certificate(self, x: np.ndarray, t: int, diagnostics: Dict[str, Any]) -> Optional[LocalCertificate]:
        self.cache.invalidate(x)
        cached = self.cache.lookup(x, self.policy.policy_id)
        if cached is not None:
            diagnostics["refinement_status"] = "cached"
            return cached

        try:
            index = nearest_boundary_index(self.certificate, x)
        except NoBoundaryPointsError:
            diagnostics["refinement_status"] = "no-boundary"
            return None
        if index in self.cache:
            diagnostics["refinement_status"] = "cached-miss"
            return None

        result = iterative_growth(replace(self.refine, seed=self.refine.seed + t), self.system, self.policy,
                                  self.spec, self.certificate, x, step=t)
        diagnostics["refinement_status"] = result.status
        diagnostics["refinement_iterations"] = result.iterations
        if not result.succeeded:
            return None
        self.cache.store(result.certificate)
        diagnostics["local_radius"] = result.certificate.radius
        return result.certificate if local_member(result.certificate, x, self.policy.policy_id) else None

    def decide(self, x: np.ndarray, t: int = 0) -> TierDecision:
        """Evaluate the tiers in order and return the first that fires."""
        x = np.asarray(x, dtype=np.float64)
        reward = float(self.spec.reward(x))
        diagnostics: Dict[str, Any] = {"reward": reward}

        if reward > 0.0:
            result = mppi_plan(self.fast.config, self.fast.cost, self.system, x, self._fast_warm, self._rng)
            self._fast_warm = shift_warm_start(result.sequence)
            return TierDecision(TIER_TARGET, result.control, diagnostics=diagnostics)
        self._fast_warm = None

        in_global = is_member(self.certificate, x)
        diagnostics["in_global"] = in_global
        diagnostics["global_distance"] = float(distance_to_certified(self.certificate, x[None])[0])
        if in_global:
            return TierDecision(TIER_GLOBAL, self._certified_control(x), diagnostics=diagnostics)

        local = self._local_certificate(x, t, diagnostics)
        diagnostics["in_local"] = local is not None
        if local is not None:
            return TierDecision(TIER_LOCAL, self._certified_control(x), local_certificate=local,
                                diagnostics=diagnostics)

        warm = unroll_policy(self.system, self.policy, x, self.recovery.config.horizon)
        cost = replace(self.recovery.cost, certificate=self.certificate,
                       local_certificates=self.cache.certificates)
        result = mppi_plan(self.recovery.config, cost, self.system, x, warm, self._rng)
        reentry = certified_distance(self.certificate, self.cache.certificates, result.states[:, 1:]) <= 0.0
        diagnostics["recovery_reentry"] = bool(np.any(reentry))
        return TierDecision(TIER_RECOVERY, result.control, diagnostics=diagnostics)


class PolicyController:
    """Policy baseline, optionally behind the CBF filter."""

    def __init__(self, system: SystemSpec, policy: PolicyHandle, cbf: Optional[CBFConfig] = None,
                 racing: RacingSpec = RacingSpec()):
        self.system = system
        self.policy = policy
        self.cbf = cbf
        self.racing = racing

    @property
    def name(self) -> str:
        return "surrogate-cbf" if self.cbf is not None else "policy-only"

    def reset(self, seed: Optional[int] = None) -> None:
        pass

    def decide(self, x: np.ndarray, t: int = 0) -> TierDecision:
        u = self.policy.evaluate(x)
        if self.cbf is not None:
            u = cbf_filter(self.system, x, u, self.cbf, self.racing)
        return TierDecision(None, u)


class MPPIController:
    """MPPI baseline with a choice of warm start and an optional CBF filter."""

    def __init__(self, system: SystemSpec, planner: PlannerSpec, policy: Optional[PolicyHandle] = None,
                 cbf: Optional[CBFConfig] = None, racing: RacingSpec = RacingSpec(), seed: int = 0,
                 name: str = "mppi"):
        if planner.config.warm_start == "policy" and policy is None:
            raise ContractViolationError("A policy warm start needs a policy")
        self.system = system
        self.planner = planner
        self.policy = policy
        self.cbf = cbf
        self.racing = racing
        self.seed = seed
        self._name = name
        self.reset(seed)

    @property
    def name(self) -> str:
        return self._name

    def reset(self, seed: Optional[int] = None) -> None:
        self.seed = self.seed if seed is None else seed
        self._rng = np.random.default_rng(self.seed)
        self._warm: Optional[np.ndarray] = None

    def decide(self, x: np.ndarray, t: int = 0) -> TierDecision:
        cfg = self.planner.config
        warm = self._warm
        if cfg.warm_start == "policy":
            warm = unroll_policy(self.system, self.policy, x, cfg.horizon)
        elif cfg.warm_start == "none":
            warm = None
        result = mppi_plan(cfg, self.planner.cost, self.system, x, warm, self._rng)
        self._warm = shift_warm_start(result.sequence)
        u = result.control
        if self.cbf is not None:
            u = cbf_filter(self.system, x, u, self.cbf, self.racing)
        return TierDecision(None, u)


@dataclass(frozen=True)
class EpisodeConfig:
    """Termination rules of a racing episode."""
    max_steps: int = 300
    corridor_half_width: float = 0.3
    gate_plane: float = 0.0


@dataclass(eq=False)
class EpisodeLog:
    """Per-step record of one episode; states has one more row than controls."""
    states: List[np.ndarray] = field(default_factory=list)
    controls: List[np.ndarray] = field(default_factory=list)
    decisions: List[TierDecision] = field(default_factory=list)
    margins: List[Tuple[float, float]] = field(default_factory=list)
    outcome: str = OUTCOME_TIMEOUT
    steps: int = 0

    @property
    def tiers(self) -> List[Optional[int]]:
        return [d.tier for d in self.decisions]

    def tier_histogram(self) -> Dict[str, int]:
        histogram: Dict[str, int] = {}
        for tier in self.tiers:
            key = "none" if tier is None else str(tier)
            histogram[key] = histogram.get(key, 0) + 1
        return histogram

    def rows(self) -> List[Dict[str, Any]]:
        """Flat per-step records (t, state, tier, margins, control)."""
        records = []
        for t, decision in enumerate(self.decisions):
            record: Dict[str, Any] = {"t": t, "tier": -1 if decision.tier is None else decision.tier}
            record.update({f"x{i}": float(v) for i, v in enumerate(self.states[t])})
            record["reward"], record["constraint"] = self.margins[t]
            record.update({f"u{i}": float(v) for i, v in enumerate(self.controls[t])})
            records.append(record)
        return records


def run_episode(controller, system: SystemSpec, spec: RewardConstraintSpec, x0: np.ndarray,
                cfg: EpisodeConfig = EpisodeConfig(), racing: RacingSpec = RacingSpec()) -> EpisodeLog:
    """
    Drive a controller in closed loop on the racing system.

    The episode ends with a collision when the constraint margin is nonpositive
    (including at step 0), a loss when the opponent reaches the gate plane no later
    than the ego, a success when the ego crosses the gate plane inside the corridor
    first, and a timeout after cfg.max_steps steps. An ego crossing outside the
    corridor hits the gate frame.
    """
    if cfg.max_steps < 1:
        raise ContractViolationError(f"Episode needs at least one step, got {cfg.max_steps}")
    x = np.asarray(x0, dtype=np.float64)
    log = EpisodeLog(states=[x.copy()])

    if float(gate_aware_constraint(x, racing)) <= 0.0:
        log.outcome = OUTCOME_COLLISION
        return log

    for t in range(cfg.max_steps):
        decision = controller.decide(x, t)
        u = compose_control(system, x, decision.control)
        x_next = step(system, x, u)

        log.decisions.append(decision)
        log.controls.append(np.asarray(decision.control, dtype=np.float64).copy())
        log.margins.append((float(spec.reward(x)), float(gate_aware_constraint(x, racing))))
        log.states.append(x_next.copy())
        log.steps = t + 1

        if float(gate_aware_constraint(x_next, racing)) <= 0.0:
            log.outcome = OUTCOME_COLLISION
            break
        ego_crossed = x_next[2] >= cfg.gate_plane
        opponent_crossed = x_next[8] >= cfg.gate_plane
        if opponent_crossed:
            log.outcome = OUTCOME_LOST
            break
        if ego_crossed:
            inside = abs(x_next[0]) < cfg.corridor_half_width and abs(x_next[4]) < cfg.corridor_half_width
            log.outcome = OUTCOME_SUCCESS if inside else OUTCOME_COLLISION
            break
        x = x_next

    logger.debug(f"Episode finished: {log.outcome} after {log.steps} steps, tiers {log.tier_histogram()}")
    return log
