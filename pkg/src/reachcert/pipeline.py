"""
End-to-end verification pipeline.

Builds the benchmark objects from a validated configuration and runs the
offline stages (sample planning, deviation bounding, global certification)
followed by the online and evaluation stages (local refinement, episodes,
success-rate studies, guarantee studies).
"""

import functools
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core.controllers import (CBFConfig, CostSpec, MPPIConfig, PolicyHandle, SurrogatePolicyConfig, band_cost,
                               make_band_policy, make_surrogate_policy, racing_cost)
from .core.global_certifier import GlobalCertificate, build_certificate
from .core.hierarchy_switcher import EpisodeConfig, EpisodeLog, run_episode
from .core.local_refiner import RefineConfig, RefinementResult, iterative_growth
from .core.reach_measure import (BandTargetSpec, RacingSpec, RewardConstraintSpec, band_reach_spec,
                                 racing_reach_spec)
from .core.scenario_engine import ScenarioConfig, SensitivityProfile, bound_deviation, required_samples, sample_pairs
from .core.systems import (ReductionMap, SystemSpec, double_integrator_system, make_opponent_config,
                           racing_system)
from .runs.experiment_harness import (ExperimentConfig, RacingContext, SuccessTable, build_controller,
                                      compare_methods, run_study, run_trials)
from .utils.config import MPPISection, ReachCertConfig
from .utils.results_io import certificate_records, emit_csv, episode_rows, save_certificate, save_profile
from .validation.oracle import OracleTable, build_oracle_table
from .validation.violation_study import RiskReport, global_violation_study, local_violation_study

logger = logging.getLogger(__name__)


@dataclass
class PipelineArtifacts:
    """Outputs of a full pipeline run."""
    sample_count: int = 0
    profile: Optional[SensitivityProfile] = None
    certificate: Optional[GlobalCertificate] = None
    tables: Optional[List[SuccessTable]] = None


class VerificationPipeline:
    """
    Builds systems, specs, policies and controllers from one configuration.
    """

    def __init__(self, config: ReachCertConfig):
        self.config = config
        self.is_racing = config.benchmark.name == "racing"
        self.racing = RacingSpec(
            corridor_half_width=config.racing.corridor_half_width,
            gate_margin=config.racing.gate_margin,
            downwash_scale=config.racing.downwash_scale,
            position_lead=config.racing.position_lead,
            velocity_lead=config.racing.velocity_lead,
            downwash_cap=config.racing.downwash_cap,
            gate_width=config.racing.gate_width,
            gate_height=config.racing.gate_height,
            position_low=tuple(config.racing.position_low),
            position_high=tuple(config.racing.position_high),
        )
        self.band = BandTargetSpec(
            target_low=config.lowdim.target_low,
            target_high=config.lowdim.target_high,
            velocity_tolerance=config.lowdim.velocity_tolerance,
            obstacle_low=config.lowdim.obstacle_low,
            obstacle_high=config.lowdim.obstacle_high,
        )
        self.system = self.build_system()
        self.reach_spec = self.build_reach_spec()
        self.policy = self.build_policy()
        self.reduction = self.build_reduction()

    # -------------------------------------------------------------------------
    # builders
    # -------------------------------------------------------------------------

    def build_system(self) -> SystemSpec:
        sys_cfg = self.config.system
        if not self.is_racing:
            return double_integrator_system(1, dt=sys_cfg.dt, control_bound=sys_cfg.control_bound,
                                            name="lowdim-double-integrator", labels=("p", "v"))
        opp = self.config.opponent
        opponent = make_opponent_config(sys_cfg.dt, opp.q_pos, opp.q_vel, opp.r, opp.goal, opp.clamp)
        return racing_system(opponent, dt=sys_cfg.dt, control_bound=sys_cfg.control_bound)

    def build_reach_spec(self) -> RewardConstraintSpec:
        cert = self.config.certificate
        if self.is_racing:
            return racing_reach_spec(self.racing, cert.gamma, cert.componentwise)
        return band_reach_spec(self.band, cert.gamma, cert.componentwise)

    def build_policy(self) -> PolicyHandle:
        if not self.is_racing:
            low = self.config.lowdim
            return make_band_policy(self.band, kp=low.kp, kd=low.kd, control_bound=self.config.system.control_bound)
        ego = self.config.ego_policy
        cfg = SurrogatePolicyConfig(
            dt=self.config.system.dt,
            q_pos=ego.q_pos,
            q_vel=ego.q_vel,
            r=ego.r,
            waypoint_lead=ego.waypoint_lead,
            velocity_lead=ego.velocity_lead,
            cruise_speed=ego.cruise_speed,
            repulsion_gain=ego.repulsion_gain,
            activation=ego.activation,
            control_bound=self.config.system.control_bound,
        )
        return make_surrogate_policy(cfg, self.racing)

    def build_reduction(self) -> ReductionMap:
        section = self.config.certificate.reduction
        if section is None:
            labels = self.system.state_labels or ()
            return ReductionMap.identity(self.system.state_dim, labels=labels)
        return ReductionMap(
            matrix=np.asarray(section.matrix, dtype=np.float64),
            free=tuple(section.free),
            reference=np.asarray(section.reference, dtype=np.float64),
            labels=tuple(section.labels),
        )

    def scenario_config(self) -> ScenarioConfig:
        s = self.config.scenario
        return ScenarioConfig(epsilon=s.epsilon, beta=s.beta, decision_dim=s.decision_dim)

    def refine_config(self) -> RefineConfig:
        r = self.config.refine
        return RefineConfig(
            samples=r.samples or required_samples(self.scenario_config()),
            max_radius=r.max_radius,
            max_iterations=r.max_iterations,
            horizon=r.horizon or self.config.scenario.horizon,
            gamma=self.config.certificate.gamma,
            seed=r.seed,
            min_radius=r.min_radius,
        )

    @staticmethod
    def mppi_config(section: MPPISection) -> MPPIConfig:
        noise = tuple(section.noise_std) if isinstance(section.noise_std, list) else float(section.noise_std)
        return MPPIConfig(
            horizon=section.horizon,
            samples=section.samples,
            temperature=section.temperature,
            noise_std=noise,
            cost=section.cost,
            warm_start=section.warm_start,
            seed=section.seed,
        )

    def cost_builder(self):
        c = self.config.cost
        weights = dict(control_weight=c.control_weight, target_weight=c.target_weight,
                       penalty_weight=c.penalty_weight, barrier_weight=c.barrier_weight,
                       position_weight=c.position_weight, velocity_weight=c.velocity_weight)
        if self.is_racing:
            return functools.partial(racing_cost, racing=self.racing, gate_goal=tuple(c.gate_goal),
                                     forward_speed=c.forward_speed, **weights)
        return functools.partial(band_cost, spec=self.band, **weights)

    def cost(self, kind: str) -> CostSpec:
        return self.cost_builder()(kind)

    def cbf_config(self) -> CBFConfig:
        c = self.config.cbf
        return CBFConfig(alpha=c.alpha, lookahead=c.lookahead, gate_walls=c.gate_walls, grid_points=c.grid_points)

    def racing_context(self, certificate: Optional[GlobalCertificate]) -> RacingContext:
        mppi = self.config.mppi
        return RacingContext(
            system=self.system,
            policy=self.policy,
            reach_spec=self.reach_spec,
            racing=self.racing,
            cost_builder=self.cost_builder(),
            fast=self.mppi_config(mppi.fast),
            recovery=self.mppi_config(mppi.recovery),
            baseline=self.mppi_config(mppi.baseline),
            refine=self.refine_config(),
            cbf=self.cbf_config(),
            certificate=certificate,
        )

    def experiment_config(self, method: str, trials: Optional[int] = None) -> ExperimentConfig:
        e = self.config.experiment
        return ExperimentConfig(
            method=method,
            initial_low=tuple(e.initial_low),
            initial_high=tuple(e.initial_high),
            trials=trials or e.trials,
            max_steps=e.max_steps,
            seed=e.seed,
            n_jobs=e.n_jobs,
        )

    # -------------------------------------------------------------------------
    # stages
    # -------------------------------------------------------------------------

    def plan_samples(self) -> int:
        n = required_samples(self.scenario_config())
        if self.config.scenario.pairs is not None and self.config.scenario.pairs < n:
            logger.warning(f"Configured pair count {self.config.scenario.pairs} is below the bound {n}")
        return self.config.scenario.pairs or n

    def bound_dynamics(self) -> SensitivityProfile:
        s = self.config.scenario
        cert = self.config.certificate
        reduction = None if cert.reduction is None else self.reduction
        pairs = sample_pairs(cert.domain_low, cert.domain_high, s.eps_x, self.plan_samples(), s.seed, reduction)
        return bound_deviation(self.system, self.policy, pairs, s.horizon, epsilon=s.epsilon, beta=s.beta)

    def certify(self, profile: SensitivityProfile, show_progress: bool = False) -> GlobalCertificate:
        c = self.config.certificate
        return build_certificate(
            self.reach_spec, self.system, self.policy, profile,
            low=c.domain_low, high=c.domain_high, spacing=c.spacing, reduction=self.reduction,
            method=c.method, max_points=c.max_points, batch_size=c.batch_size,
            seed=self.config.benchmark.seed, show_progress=show_progress,
        )

    def refine(self, certificate: GlobalCertificate, x: np.ndarray) -> RefinementResult:
        return iterative_growth(self.refine_config(), self.system, self.policy, self.reach_spec, certificate, x)

    def simulate(self, certificate: Optional[GlobalCertificate], method: str, x0: np.ndarray,
                 seed: int = 0) -> EpisodeLog:
        controller = build_controller(self.racing_context(certificate), method, seed)
        episode = EpisodeConfig(max_steps=self.config.experiment.max_steps,
                                corridor_half_width=self.racing.corridor_half_width)
        return run_episode(controller, self.system, self.reach_spec, x0, episode, self.racing)

    def evaluate(self, certificate: Optional[GlobalCertificate], methods: Optional[List[str]] = None,
                 trials: Optional[int] = None, output_dir: Optional[Path] = None) -> List[SuccessTable]:
        context = self.racing_context(certificate)
        tables = []
        for method in methods or self.config.experiment.methods:
            cfg = self.experiment_config(method, trials)
            if output_dir is None:
                tables.append(run_study(cfg, context))
                continue
            logs = run_trials(cfg, context, show_progress=True)
            emit_csv(episode_rows(logs, method), Path(output_dir) / f"episodes_{method}.csv")
            tables.append(SuccessTable.from_outcomes(method, [log.outcome for log in logs]))
        return tables

    def build_oracle(self, show_progress: bool = False) -> OracleTable:
        o = self.config.oracle
        return build_oracle_table(self.system, self.reach_spec, o.low, o.high, o.resolution, o.horizon,
                                  levels=o.levels, budget=o.budget, n_jobs=o.n_jobs, show_progress=show_progress)

    def global_study(self, certificate: GlobalCertificate, oracle: OracleTable, seed: int = 0) -> RiskReport:
        return global_violation_study(certificate, oracle, self.system, self.policy, self.reach_spec,
                                      self.config.oracle.fresh_samples, seed=seed,
                                      epsilon=self.config.scenario.epsilon)

    def local_study(self, refinement: RefinementResult, seed: int = 0) -> Optional[RiskReport]:
        if not refinement.succeeded:
            return None
        cfg = self.refine_config()
        return local_violation_study(refinement.certificate, self.system, self.policy, self.reach_spec,
                                     self.config.oracle.fresh_samples, cfg.horizon, seed=seed,
                                     epsilon=self.config.scenario.epsilon, gamma=cfg.gamma)

    def run_all(self, output_dir: Path, trials: Optional[int] = None) -> PipelineArtifacts:
        """
        Offline certification followed by the success-rate study.

        Returns:
            PipelineArtifacts with the profile, certificate and success tables
        """
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        artifacts = PipelineArtifacts()
        logger.info("Starting verification pipeline...")
        print("\nREACH-AVOID VERIFICATION PIPELINE")
        print("=" * 50)

        print("\nSTEP 1: Planning scenario sample count...")
        artifacts.sample_count = self.plan_samples()
        print(f"Using {artifacts.sample_count} scenario pairs")

        print("\nSTEP 2: Bounding trajectory deviations...")
        start_time = time.time()
        artifacts.profile = self.bound_dynamics()
        save_profile(artifacts.profile, output_dir / "profile.json")
        step_time = time.time() - start_time
        print(f"Deviation bound at T: {artifacts.profile.bounds[-1]:.4f} (took {step_time:.1f}s)")

        print("\nSTEP 3: Building global certificate...")
        start_time = time.time()
        artifacts.certificate = self.certify(artifacts.profile, show_progress=True)
        save_certificate(artifacts.certificate, output_dir / "certificate.json")
        emit_csv(certificate_records(artifacts.certificate), output_dir / "certificate.csv")
        step_time = time.time() - start_time
        print(f"Certified {artifacts.certificate.certified_count}/{artifacts.certificate.points.shape[0]} nominals, "
              f"{artifacts.certificate.boundary_count} on the boundary (took {step_time:.1f}s)")

        if self.is_racing:
            print("\nSTEP 4: Running success-rate study...")
            start_time = time.time()
            artifacts.tables = self.evaluate(artifacts.certificate, trials=trials, output_dir=output_dir)
            emit_csv([t.as_row() for t in artifacts.tables], output_dir / "success_table.csv")
            step_time = time.time() - start_time
            for table in artifacts.tables:
                low, high = table.interval
                print(f"   {table.method:22s} {table.success_fraction:.3f} [{low:.3f}, {high:.3f}]")
            if any(t.method == "hybrid" for t in artifacts.tables):
                emit_csv(compare_methods(artifacts.tables), output_dir / "comparison.csv")
            print(f"Study finished (took {step_time:.1f}s)")

        print("\nPIPELINE COMPLETED SUCCESSFULLY!")
        print("=" * 50)
        return artifacts
