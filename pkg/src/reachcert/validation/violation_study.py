"""
Empirical checks of the probabilistic guarantees.

- Global: among fresh states inside the certified set, how often is the true
  value negative?
- Local: among fresh states inside a returned local ball, how often does the
  policy fail?
- Deviation calibration: how often do fresh perturbed pairs exceed the
  scenario-certified deviation bound?
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from scipy.stats import beta as beta_dist

from ..core.controllers import PolicyHandle
from ..core.errors import ContractViolationError
from ..core.global_certifier import GlobalCertificate, member_mask
from ..core.local_refiner import LocalCertificate
from ..core.reach_measure import RewardConstraintSpec, rollout_values
from ..core.scenario_engine import (SensitivityProfile, ScenarioPairSet, bound_deviation, deviation_exceedance,
                                    pair_deviations, sample_ball, sample_pairs)
from ..core.systems import SystemSpec, rollout_batch
from .oracle import OracleTable

logger = logging.getLogger(__name__)


def clopper_pearson_upper(failures: int, trials: int, confidence: float = 0.95) -> float:
    """One-sided Clopper-Pearson upper confidence bound on a binomial proportion."""
    if trials <= 0:
        return 1.0
    if failures >= trials:
        return 1.0
    return float(beta_dist.ppf(confidence, failures + 1, trials - failures))


def clopper_pearson_interval(successes: int, trials: int, confidence: float = 0.95):
    """Two-sided exact interval."""
    if trials <= 0:
        return 0.0, 1.0
    alpha = 1.0 - confidence
    lower = 0.0 if successes == 0 else float(beta_dist.ppf(alpha / 2, successes, trials - successes + 1))
    upper = 1.0 if successes == trials else float(beta_dist.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lower, upper


@dataclass(frozen=True)
class RiskReport:
    """Violation estimate against a risk level."""
    samples: int
    members: int
    violations: int
    estimate: float
    upper_bound: float
    epsilon: float
    confidence: float
    passed: bool
    vacuous: bool

    def as_row(self) -> Dict[str, object]:
        return {
            "samples": self.samples,
            "members": self.members,
            "violations": self.violations,
            "estimate": self.estimate,
            "upper_bound": self.upper_bound,
            "epsilon": self.epsilon,
            "passed": self.passed,
            "vacuous": self.vacuous,
        }


def risk_report(samples: int, members: int, violations: int, epsilon: float, confidence: float = 0.95) -> RiskReport:
    if members == 0:
        return RiskReport(samples, 0, 0, 0.0, 0.0, epsilon, confidence, passed=True, vacuous=True)
    upper = clopper_pearson_upper(violations, members, confidence)
    return RiskReport(samples, members, violations, violations / members, upper, epsilon, confidence,
                      passed=upper <= epsilon, vacuous=False)


def ground_truth_values(cert: GlobalCertificate, oracle: OracleTable, system: SystemSpec, policy: PolicyHandle,
                        spec: RewardConstraintSpec, x: np.ndarray) -> np.ndarray:
    """
    Best available lower bound of the value function at states (B, n).

    Maximum of the exhaustive open-loop oracle, the policy's closed-loop value over
    the certificate horizon, and the value of replaying the nearest certified
    nominal's control sequence from x.
    """
    x = np.atleast_2d(x)
    values = oracle.exact(x)

    states, _ = rollout_batch(system, x, cert.horizon, policy=policy)
    values = np.maximum(values, rollout_values(spec, states))

    _, nearest = cert.nearest_certified(cert.reduction.reduce(x))
    has_witness = nearest >= 0
    if np.any(has_witness):
        nominals = cert.reduction.lift(cert.points[nearest[has_witness]])
        _, controls = rollout_batch(system, nominals, cert.horizon, policy=policy)
        replay, _ = rollout_batch(system, x[has_witness], cert.horizon, controls=controls)
        values[has_witness] = np.maximum(values[has_witness], rollout_values(spec, replay))
    return values


def global_violation_study(cert: GlobalCertificate, oracle: OracleTable, system: SystemSpec, policy: PolicyHandle,
                           spec: RewardConstraintSpec, samples: int, seed: int = 0, epsilon: float = 0.1,
                           confidence: float = 0.95) -> RiskReport:
    """
    Estimate P(V < 0 and x certified) restricted to certified states.

    Fresh states are drawn uniformly on the certificate's domain box (reduced
    coordinates lifted with the reduction reference).
    """
    if len(oracle.axes) != cert.domain_low.size or not oracle.covers(cert.domain_low, cert.domain_high):
        raise ContractViolationError("Oracle grid does not cover the certificate domain")
    if oracle.horizon > cert.horizon:
        raise ContractViolationError(f"Oracle horizon {oracle.horizon} exceeds certificate horizon {cert.horizon}")
    rng = np.random.default_rng(seed)
    z = rng.uniform(cert.domain_low, cert.domain_high, size=(samples, cert.domain_low.size))
    x = cert.reduction.lift(z)
    members = member_mask(cert, x)
    member_states = x[members]
    if member_states.shape[0] == 0:
        logger.info("No fresh sample fell in the certified set; study is vacuous")
        return risk_report(samples, 0, 0, epsilon, confidence)

    truth = ground_truth_values(cert, oracle, system, policy, spec, member_states)
    violations = int(np.sum(truth < 0.0))
    report = risk_report(samples, member_states.shape[0], violations, epsilon, confidence)
    logger.info(f"Global study: {violations}/{report.members} violations, upper bound {report.upper_bound:.4f}")
    return report


def local_violation_study(lc: LocalCertificate, system: SystemSpec, policy: PolicyHandle, spec: RewardConstraintSpec,
                          samples: int, horizon: int, seed: int = 0, epsilon: float = 0.1,
                          gamma: Optional[float] = None, confidence: float = 0.95) -> RiskReport:
    """Fraction of fresh states in B_r*(center) whose policy rollout has value <= 0."""
    rng = np.random.default_rng(seed)
    offsets = sample_ball(rng, samples, lc.center.size, lc.radius)
    x = lc.reduction.lift(lc.center + offsets, reference=lc.reference)
    states, _ = rollout_batch(system, x, horizon, policy=policy)
    violations = int(np.sum(rollout_values(spec, states, gamma=gamma) <= 0.0))
    return risk_report(samples, samples, violations, epsilon, confidence)


@dataclass(frozen=True)
class CalibrationReport:
    """Per-step exceedance of fresh pairs over the certified deviation bound."""
    exceedance: np.ndarray
    epsilon: float

    @property
    def worst(self) -> float:
        return float(np.max(self.exceedance))

    @property
    def passed(self) -> bool:
        return self.worst <= self.epsilon


def deviation_calibration(system: SystemSpec, policy: PolicyHandle, profile: SensitivityProfile,
                          fresh: ScenarioPairSet, epsilon: float = 0.1) -> CalibrationReport:
    deviations = pair_deviations(system, policy, fresh, profile.horizon)
    return CalibrationReport(exceedance=deviation_exceedance(profile, deviations), epsilon=epsilon)


def repeated_calibration(system: SystemSpec, policy: PolicyHandle, low, high, eps_x: float, horizon: int,
                         pairs: int, fresh: int, repetitions: int, seed: int = 0,
                         epsilon: float = 0.1) -> List[CalibrationReport]:
    """Rebuild the deviation profile `repetitions` times and calibrate each against fresh pairs."""
    reports = []
    for rep in range(repetitions):
        profile = bound_deviation(system, policy, sample_pairs(low, high, eps_x, pairs, seed + 2 * rep), horizon)
        fresh_pairs = sample_pairs(low, high, eps_x, fresh, seed + 2 * rep + 1)
        reports.append(deviation_calibration(system, policy, profile, fresh_pairs, epsilon))
    return reports
