"""
Scenario-optimisation machinery.

- Sample-complexity planning: N >= (2/eps)(ln(1/beta) + d)
- Scalar scenario programs (min z s.t. s_i <= z for all i)
- Probabilistic trajectory-deviation bounding: nominal closed-loop rollouts are
  paired with perturbed initial states that replay the nominal control sequence;
  the per-step deviation bound is the optimum of one scalar scenario program per t.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import ContractViolationError, EmptyInputError
from .systems import ReductionMap, SystemSpec, rollout_batch

if TYPE_CHECKING:
    from .controllers import PolicyHandle

logger = logging.getLogger(__name__)

# values this close to an integer are treated as that integer before the ceiling
_CEIL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class ScenarioConfig:
    """Risk level epsilon, confidence beta and number of decision variables d."""
    epsilon: float = 0.1
    beta: float = 0.001
    decision_dim: int = 1

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ContractViolationError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 < self.beta < 1.0:
            raise ContractViolationError(f"beta must lie in (0, 1), got {self.beta}")
        if int(self.decision_dim) != self.decision_dim or self.decision_dim < 1:
            raise ContractViolationError(f"decision_dim must be an integer >= 1, got {self.decision_dim}")


def required_samples(cfg: ScenarioConfig) -> int:
    """Smallest integer N with N >= (2/eps)(ln(1/beta) + d)."""
    bound = (2.0 / cfg.epsilon) * (-math.log(cfg.beta) + cfg.decision_dim)
    return int(math.ceil(bound - _CEIL_TOLERANCE))


def scalar_scenario_max(samples: Sequence[float]) -> float:
    """Optimal value of min z s.t. s_i <= z for every sample, i.e. the sample maximum."""
    values = np.asarray(samples, dtype=np.float64).ravel()
    if values.size == 0:
        raise EmptyInputError("Scalar scenario program needs at least one sample")
    return float(np.max(values))


@dataclass(frozen=True, eq=False)
class ScenarioPairSet:
    """N pairs of nominal and perturbed initial states."""
    nominals: np.ndarray
    perturbed: np.ndarray
    seed: int
    domain_low: np.ndarray
    domain_high: np.ndarray
    eps_x: float

    @property
    def size(self) -> int:
        return self.nominals.shape[0]


def _check_box(low: np.ndarray, high: np.ndarray, allow_pinned: bool = False) -> None:
    if low.shape != high.shape or np.any(high < low):
        raise ContractViolationError("Sampling box needs high >= low on every axis")
    extent = high - low
    if np.all(extent == 0) or (not allow_pinned and np.any(extent == 0)):
        raise ContractViolationError("Degenerate sampling box: zero extent")


def sample_ball(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    """Uniform samples in the Euclidean ball of the given radius (direction-radius method)."""
    direction = rng.standard_normal((count, dim))
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
    scale = radius * rng.uniform(size=count) ** (1.0 / dim)
    return direction * scale[:, None]


def sample_pairs(low: Sequence[float], high: Sequence[float], eps_x: float, count: int, seed: int,
                 reduction: Optional[ReductionMap] = None) -> ScenarioPairSet:
    """
    Draw N i.i.d. scenario pairs.

    Args:
        low, high: Sampling box for the nominal states (reduced coordinates if a reduction is given)
        eps_x: Perturbation ball radius in the full state norm
        count: Number of pairs N
        seed: RNG seed; identical seeds give identical pair sets
        reduction: Optional reduction map used to lift reduced nominals to full states

    Returns:
        ScenarioPairSet with nominals uniform on the box and perturbations uniform on the ball
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    # reduced slabs may pin coordinates to a single value
    _check_box(low, high, allow_pinned=reduction is not None)
    if eps_x < 0:
        raise ContractViolationError(f"eps_x must be nonnegative, got {eps_x}")
    if count < 1:
        raise ContractViolationError(f"Need at least one pair, got {count}")

    rng = np.random.default_rng(seed)
    nominals = rng.uniform(low, high, size=(count, low.size))
    if reduction is not None:
        nominals = reduction.lift(nominals)
    perturbed = nominals + sample_ball(rng, count, nominals.shape[1], eps_x)

    return ScenarioPairSet(nominals=nominals, perturbed=perturbed, seed=seed,
                           domain_low=low, domain_high=high, eps_x=float(eps_x))


@dataclass(frozen=True, eq=False)
class SensitivityProfile:
    """Scenario-certified deviation bounds for t = 0..T."""
    horizon: int
    bounds: np.ndarray
    eps_x: float
    sample_count: int
    seed: int
    domain: str = ""
    weighted: bool = False
    epsilon: Optional[float] = None   # risk level the sample count was planned for
    beta: Optional[float] = None      # confidence parameter of the same plan

    def __post_init__(self):
        bounds = np.asarray(self.bounds, dtype=np.float64)
        if bounds.shape != (self.horizon + 1,):
            raise ContractViolationError(f"Profile needs {self.horizon + 1} bounds, got {bounds.shape}")
        if np.any(bounds < 0):
            raise ContractViolationError("Deviation bounds must be nonnegative")
        if not self.weighted and bounds[0] > self.eps_x * (1.0 + 1e-12):
            raise ContractViolationError(f"Initial deviation {bounds[0]} exceeds eps_x={self.eps_x}")
        object.__setattr__(self, "bounds", bounds)

    @classmethod
    def zeros(cls, horizon: int, eps_x: float = 0.0) -> "SensitivityProfile":
        return cls(horizon=horizon, bounds=np.zeros(horizon + 1), eps_x=eps_x, sample_count=0, seed=0)

    def digest(self) -> str:
        """Stable hash used to bind certificates to the profile they were built with."""
        h = hashlib.sha256()
        h.update(self.bounds.tobytes())
        h.update(f"{self.horizon}|{self.eps_x!r}|{self.sample_count}|{self.seed}".encode())
        h.update(f"{self.epsilon!r}|{self.beta!r}".encode())
        return h.hexdigest()[:16]


def trajectory_deviations(nominal_states: np.ndarray, perturbed_states: np.ndarray,
                          weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """||x_t - xbar_t|| for every pair and step, optionally with a diagonal weight."""
    diff = np.asarray(perturbed_states) - np.asarray(nominal_states)
    if weights is not None:
        diff = diff * np.sqrt(np.asarray(weights, dtype=np.float64))
    return np.linalg.norm(diff, axis=-1)


def pair_deviations(system: SystemSpec, policy: "PolicyHandle", pairs: ScenarioPairSet, horizon: int,
                    weights: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Deviation of every perturbed rollout from its nominal, shape (N, T+1).

    The nominal is rolled out closed-loop under the policy; the perturbed state replays
    the nominal's control sequence open-loop.
    """
    nominal_states, controls = rollout_batch(system, pairs.nominals, horizon, policy=policy)
    perturbed_states, _ = rollout_batch(system, pairs.perturbed, horizon, controls=controls)
    return trajectory_deviations(nominal_states, perturbed_states, weights)


def bound_deviation(system: SystemSpec, policy: "PolicyHandle", pairs: ScenarioPairSet, horizon: int,
                    weights: Optional[Sequence[float]] = None, epsilon: Optional[float] = None,
                    beta: Optional[float] = None) -> SensitivityProfile:
    """
    Solve the scalar deviation program at every t on the same N pairs.

    epsilon and beta are recorded on the profile when the pair count was planned
    with required_samples.
    """
    if pairs.size == 0:
        raise EmptyInputError("No scenario pairs to bound")
    deviations = pair_deviations(system, policy, pairs, horizon, weights)
    bounds = np.array([scalar_scenario_max(deviations[:, t]) for t in range(horizon + 1)])
    logger.info(f"Deviation bounds from {pairs.size} pairs: dx*_0={bounds[0]:.4f}, dx*_T={bounds[-1]:.4f}")
    return SensitivityProfile(
        horizon=horizon,
        bounds=bounds,
        eps_x=pairs.eps_x,
        sample_count=pairs.size,
        seed=pairs.seed,
        domain=f"box{pairs.domain_low.tolist()}-{pairs.domain_high.tolist()}",
        weighted=weights is not None,
        epsilon=epsilon,
        beta=beta,
    )


def deviation_exceedance(profile: SensitivityProfile, deviations: np.ndarray) -> np.ndarray:
    """Fraction of fresh deviations exceeding the bound, per step t."""
    deviations = np.asarray(deviations, dtype=np.float64)
    return np.mean(deviations > profile.bounds[None, : deviations.shape[1]], axis=0)
