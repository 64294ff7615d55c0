"""
Reward/constraint functions and the discounted reach-avoid measure.

Reward and constraint functions return component margins along the last axis;
the scalar r(x), c(x) is the minimum over components, so r > 0 (c > 0) holds
exactly when every component inequality holds strictly. Lipschitz constants are
kept per component so certificates can deflate each margin separately.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractViolationError
from .systems import Trajectory

logger = logging.getLogger(__name__)

MarginFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class RewardConstraintSpec:
    """Reward r, constraint c (as component margins), their Lipschitz constants and discount."""
    reward_fn: MarginFn
    constraint_fn: MarginFn
    reward_lipschitz: np.ndarray
    constraint_lipschitz: np.ndarray
    gamma: float
    componentwise: bool = True
    name: str = "reach-avoid"

    def __post_init__(self):
        reward_lipschitz = np.atleast_1d(np.asarray(self.reward_lipschitz, dtype=np.float64))
        constraint_lipschitz = np.atleast_1d(np.asarray(self.constraint_lipschitz, dtype=np.float64))
        if np.any(reward_lipschitz < 0) or np.any(constraint_lipschitz < 0):
            raise ContractViolationError("Lipschitz constants must be nonnegative")
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolationError(f"Discount gamma must lie in (0, 1), got {self.gamma}")
        object.__setattr__(self, "reward_lipschitz", reward_lipschitz)
        object.__setattr__(self, "constraint_lipschitz", constraint_lipschitz)

    @property
    def L_r(self) -> float:
        return float(np.max(self.reward_lipschitz))

    @property
    def L_c(self) -> float:
        return float(np.max(self.constraint_lipschitz))

    def reward_components(self, x: np.ndarray) -> np.ndarray:
        return self.reward_fn(np.asarray(x, dtype=np.float64))

    def constraint_components(self, x: np.ndarray) -> np.ndarray:
        return self.constraint_fn(np.asarray(x, dtype=np.float64))

    def reward(self, x: np.ndarray) -> np.ndarray:
        return np.min(self.reward_components(x), axis=-1)

    def constraint(self, x: np.ndarray) -> np.ndarray:
        return np.min(self.constraint_components(x), axis=-1)


def ra_measure_series(rewards: np.ndarray, constraints: np.ndarray, gamma: float) -> np.ndarray:
    """
    g_gamma(xi, t) for every t along the last axis.

    g(t) = min{ gamma^t r_t, min_{tau <= t} gamma^tau c_tau }
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    constraints = np.asarray(constraints, dtype=np.float64)
    discount = gamma ** np.arange(rewards.shape[-1])
    running_constraint = np.minimum.accumulate(discount * constraints, axis=-1)
    return np.minimum(discount * rewards, running_constraint)


def ra_measure(spec: RewardConstraintSpec, traj: Trajectory, t: int) -> float:
    """Reach-avoid measure of a trajectory prefix ending at step t."""
    if not 0 <= t < traj.states.shape[0]:
        raise ContractViolationError(f"Step {t} outside trajectory of length {traj.states.shape[0]}")
    prefix = traj.states[: t + 1]
    series = ra_measure_series(spec.reward(prefix), spec.constraint(prefix), spec.gamma)
    return float(series[t])


def rollout_values(spec: RewardConstraintSpec, states: np.ndarray, gamma: Optional[float] = None) -> np.ndarray:
    """sup_t g_gamma for a batch of trajectories, states of shape (..., T+1, n)."""
    gamma = spec.gamma if gamma is None else gamma
    series = ra_measure_series(spec.reward(states), spec.constraint(states), gamma)
    return np.max(series, axis=-1)


def rollout_value(spec: RewardConstraintSpec, traj: Trajectory) -> float:
    """Positive iff the trajectory reaches the target without prior constraint violation."""
    if traj.states.shape[0] == 0:
        raise ContractViolationError("Trajectory is empty")
    return float(rollout_values(spec, traj.states))


def lipschitz_estimate(fn: Callable[[np.ndarray], np.ndarray], low: Sequence[float], high: Sequence[float],
                       samples: int, seed: int = 0) -> float:
    """
    Sampled lower bound on the Lipschitz constant of a scalar state function over a box.

    Args:
        fn: Vectorised scalar function, (B, n) -> (B,)
        low, high: Box corners
        samples: Number of sampled points (consecutive points form pairs)
        seed: RNG seed

    Returns:
        max |f(x) - f(y)| / ||x - y||_2 over the sampled pairs
    """
    if samples < 2:
        raise ContractViolationError(f"Need at least 2 samples, got {samples}")
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if np.any(high <= low):
        raise ContractViolationError("Degenerate domain: box has zero volume")

    rng = np.random.default_rng(seed)
    points = rng.uniform(low, high, size=(samples, low.size))
    values = np.asarray(fn(points), dtype=np.float64)
    distances = np.linalg.norm(points[1:] - points[:-1], axis=-1)
    ratios = np.abs(values[1:] - values[:-1]) / np.maximum(distances, 1e-300)
    return float(np.max(ratios))


# =============================================================================
# RACING BENCHMARK
# =============================================================================

@dataclass(frozen=True)
class RacingSpec:
    """Gate corridor, gate-wall and downwash geometry of the racing benchmark."""
    corridor_half_width: float = 0.3     # |p_x^e|, |p_z^e| < 0.3 in the target set
    gate_margin: float = 0.05            # +-p_x^e - p_y^e > -0.05 (and for z)
    downwash_scale: float = 0.2          # ||dp_xy||^2 > (1 + max(dz, 0)) * 0.2
    position_lead: float = 0.0           # p_y^e - p_y^o > position_lead
    velocity_lead: float = 0.0           # v_y^e - v_y^o > velocity_lead
    downwash_cap: float = 2.0            # downwash margin is min(margin, cap); sign preserved
    gate_width: float = 0.6              # w (not used by r; corridor stands in)
    gate_height: float = 0.6             # h (not used by r)
    position_low: Tuple[float, float, float] = (-1.5, -4.0, -1.0)   # operating box per axis (m)
    position_high: Tuple[float, float, float] = (1.5, 1.0, 1.0)

    def __post_init__(self):
        for name in ("corridor_half_width", "gate_margin", "downwash_scale", "downwash_cap", "gate_width", "gate_height"):
            if not getattr(self, name) > 0:
                raise ContractViolationError(f"RacingSpec.{name} must be positive")
        if self.position_lead < 0 or self.velocity_lead < 0:
            raise ContractViolationError("Lead margins must be nonnegative")
        if any(h <= l for l, h in zip(self.position_low, self.position_high)):
            raise ContractViolationError("Operating box must have positive extent on every axis")


def _check_racing_state(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 12:
        raise ContractViolationError(f"Racing functions need the 12D joint state, got dimension {x.shape[-1]}")
    return x


def racing_reward_components(x: np.ndarray, spec: RacingSpec = RacingSpec()) -> np.ndarray:
    x = _check_racing_state(x)
    return np.stack([
        x[..., 2] - x[..., 8] - spec.position_lead,
        x[..., 3] - x[..., 9] - spec.velocity_lead,
        spec.corridor_half_width - np.abs(x[..., 0]),
        spec.corridor_half_width - np.abs(x[..., 4]),
    ], axis=-1)


def downwash_margin(x: np.ndarray, spec: RacingSpec = RacingSpec()) -> np.ndarray:
    """LHS^2 - RHS of the downwash constraint (uncapped)."""
    x = _check_racing_state(x)
    horizontal = (x[..., 0] - x[..., 6]) ** 2 + (x[..., 2] - x[..., 8]) ** 2
    height_gap = np.maximum(x[..., 10] - x[..., 4], 0.0)
    return horizontal - (1.0 + height_gap) * spec.downwash_scale


def gate_wall_margins(x: np.ndarray, spec: RacingSpec = RacingSpec()) -> np.ndarray:
    x = _check_racing_state(x)
    px, py, pz = x[..., 0], x[..., 2], x[..., 4]
    return np.stack([
        px - py + spec.gate_margin,
        -px - py + spec.gate_margin,
        pz - py + spec.gate_margin,
        -pz - py + spec.gate_margin,
    ], axis=-1)


def racing_constraint_components(x: np.ndarray, spec: RacingSpec = RacingSpec()) -> np.ndarray:
    capped = np.minimum(downwash_margin(x, spec), spec.downwash_cap)
    return np.concatenate([capped[..., None], gate_wall_margins(x, spec)], axis=-1)


def racing_reward(x: np.ndarray, spec: RacingSpec = RacingSpec()) -> np.ndarray:
    return np.min(racing_reward_components(x, spec), axis=-1)


def racing_constraint(x: np.ndarray, spec: RacingSpec = RacingSpec()) -> np.ndarray:
    return np.min(racing_constraint_components(x, spec), axis=-1)


def gate_aware_constraint(x: np.ndarray, spec: RacingSpec = RacingSpec()) -> np.ndarray:
    """Constraint with gate walls active only while the ego is before the gate plane."""
    x = _check_racing_state(x)
    walls = np.min(gate_wall_margins(x, spec), axis=-1)
    walls = np.where(x[..., 2] < 0.0, walls, np.inf)
    return np.minimum(np.minimum(downwash_margin(x, spec), spec.downwash_cap), walls)


def racing_lipschitz(spec: RacingSpec = RacingSpec()) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-component Lipschitz constants of the racing margins over the operating box.

    Returns:
        (reward constants (4,), constraint constants (5,))
    """
    sqrt2 = np.sqrt(2.0)
    reward = np.array([sqrt2, sqrt2, 1.0, 1.0])

    span = np.asarray(spec.position_high) - np.asarray(spec.position_low)
    max_height_gap = span[2]
    # the capped margin only varies where the horizontal distance^2 is below this bound
    active_sq = spec.downwash_cap + spec.downwash_scale * (1.0 + max_height_gap)
    horizontal_sq = min(active_sq, span[0] ** 2 + span[1] ** 2)
    downwash = np.sqrt(8.0 * horizontal_sq + 2.0 * spec.downwash_scale ** 2)
    constraint = np.array([downwash, sqrt2, sqrt2, sqrt2, sqrt2])
    return reward, constraint


def racing_reach_spec(spec: RacingSpec, gamma: float, componentwise: bool = True) -> RewardConstraintSpec:
    reward_lipschitz, constraint_lipschitz = racing_lipschitz(spec)
    logger.info(f"Racing Lipschitz constants: L_r={reward_lipschitz.max():.3f}, L_c={constraint_lipschitz.max():.3f}")
    return RewardConstraintSpec(
        reward_fn=lambda x: racing_reward_components(x, spec),
        constraint_fn=lambda x: racing_constraint_components(x, spec),
        reward_lipschitz=reward_lipschitz,
        constraint_lipschitz=constraint_lipschitz,
        gamma=gamma,
        componentwise=componentwise,
        name="racing",
    )


# =============================================================================
# LOW-DIMENSIONAL BENCHMARK
# =============================================================================

@dataclass(frozen=True)
class BandTargetSpec:
    """1-axis benchmark: reach a position band at low speed, avoid an obstacle interval."""
    target_low: float = 0.5
    target_high: float = 1.0
    velocity_tolerance: float = 0.5
    obstacle_low: float = 1.3
    obstacle_high: float = 1.8

    def __post_init__(self):
        if not (self.target_low < self.target_high and self.obstacle_low < self.obstacle_high):
            raise ContractViolationError("Target band and obstacle interval must be non-empty")
        if not self.velocity_tolerance > 0:
            raise ContractViolationError("Velocity tolerance must be positive")


def band_reward_components(x: np.ndarray, spec: BandTargetSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    p, v = x[..., 0], x[..., 1]
    return np.stack([p - spec.target_low, spec.target_high - p, spec.velocity_tolerance - np.abs(v)], axis=-1)


def band_constraint_components(x: np.ndarray, spec: BandTargetSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    p = x[..., 0]
    return np.maximum(spec.obstacle_low - p, p - spec.obstacle_high)[..., None]


def band_reach_spec(spec: BandTargetSpec, gamma: float, componentwise: bool = True) -> RewardConstraintSpec:
    return RewardConstraintSpec(
        reward_fn=lambda x: band_reward_components(x, spec),
        constraint_fn=lambda x: band_constraint_components(x, spec),
        reward_lipschitz=np.ones(3),
        constraint_lipschitz=np.ones(1),
        gamma=gamma,
        componentwise=componentwise,
        name="band-target",
    )
