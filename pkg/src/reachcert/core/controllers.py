"""
Control policies shared by the verification stack.

This module provides:
- PolicyHandle, the black-box policy abstraction every other module consumes
- The analytic overtaking policy standing in for a learned reachability policy
- A saturating PD policy for the low-dimensional benchmark
- MPPI with goal, soft-constraint, target-maintenance and recovery costs
- A discrete-time CBF safety filter for the downwash and gate-wall barriers
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from .errors import ContractViolationError, MissingCertificateError, MPPIFailureError
from .global_certifier import GlobalCertificate, distance_to_certified
from .reach_measure import (BandTargetSpec, RacingSpec, band_constraint_components, band_reward_components,
                            downwash_margin, gate_aware_constraint, gate_wall_margins, racing_reward)
from .systems import EGO_SLICE, OPPONENT_SLICE, SystemSpec, compose_control, lqr_gain, opponent_lqr, rollout_batch, step

if TYPE_CHECKING:
    from .local_refiner import LocalCertificate

logger = logging.getLogger(__name__)

COST_KINDS = ("fast-goal", "recovery", "soft-constraint", "plain-goal")
WARM_START_SOURCES = ("none", "policy", "previous")

# below this temperature the softmax is replaced by its argmin limit
ARGMIN_TEMPERATURE = 1e-9


# =============================================================================
# POLICY ABSTRACTION
# =============================================================================

@dataclass(frozen=True, eq=False)
class PolicyHandle:
    """
    Named state-feedback policy.

    fn maps a batch of states (B, n) to agent controls (B, m); evaluate also accepts a
    single state and always clamps to the control bound.
    """
    policy_id: str
    fn: Callable[[np.ndarray], np.ndarray]
    control_bound: float = 1.0
    deterministic: bool = True

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(self.fn(np.atleast_2d(x)), dtype=np.float64)
        u = np.clip(u, -self.control_bound, self.control_bound)
        return u[0] if x.ndim == 1 else u

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.evaluate(x)


@dataclass(frozen=True)
class SurrogatePolicyConfig:
    """Gains and geometry of the analytic overtaking policy."""
    dt: float = 0.1
    q_pos: float = 1.0            # per-axis LQR state weights for the tracking gain
    q_vel: float = 0.1
    r: float = 0.1
    waypoint_lead: float = 1.0    # waypoint sits this far ahead of the opponent in p_y (m)
    velocity_lead: float = 0.5    # tracked v_y exceeds the opponent's by this much (m/s)
    cruise_speed: float = 0.0     # lower bound on the tracked forward speed (m/s)
    repulsion_gain: float = 2.0
    activation: float = 0.3       # repulsion is active while the downwash margin is below this
    control_bound: float = 1.0


def make_surrogate_policy(cfg: SurrogatePolicyConfig = SurrogatePolicyConfig(),
                          racing: RacingSpec = RacingSpec(), policy_id: str = "surrogate-overtake") -> PolicyHandle:
    """
    Deterministic overtaking policy for the 12D joint racing state.

    The ego tracks a waypoint ahead of the opponent on the gate centreline with a
    per-axis LQR gain, and is pushed away from the opponent's horizontal position
    whenever the downwash margin drops below the activation threshold.
    """
    k_pos, k_vel = lqr_gain(cfg.dt, cfg.q_pos, cfg.q_vel, cfg.r)
    logger.debug(f"Surrogate tracking gain: k_p={k_pos:.3f}, k_v={k_vel:.3f}")

    def surrogate(x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != 12:
            raise ContractViolationError(f"Surrogate policy needs the 12D joint state, got {x.shape[-1]}")
        ego = x[:, EGO_SLICE]
        opponent = x[:, OPPONENT_SLICE]

        position_ref = np.zeros((x.shape[0], 3))
        position_ref[:, 1] = opponent[:, 2] + cfg.waypoint_lead
        velocity_ref = np.zeros((x.shape[0], 3))
        velocity_ref[:, 1] = np.maximum(opponent[:, 3] + cfg.velocity_lead, cfg.cruise_speed)

        positions = ego[:, [0, 2, 4]]
        velocities = ego[:, [1, 3, 5]]
        u = -k_pos * (positions - position_ref) - k_vel * (velocities - velocity_ref)

        margin = downwash_margin(x, racing)
        active = margin < cfg.activation
        if np.any(active):
            offset = ego[:, [0, 2]] - opponent[:, [0, 2]]
            norm = np.linalg.norm(offset, axis=1, keepdims=True)
            direction = np.where(norm > 1e-9, offset / np.maximum(norm, 1e-9), np.array([1.0, 0.0]))
            strength = cfg.repulsion_gain * (cfg.activation - margin) / cfg.activation
            u[:, :2] += np.where(active[:, None], strength[:, None] * direction, 0.0)

        return np.clip(u, -cfg.control_bound, cfg.control_bound)

    return PolicyHandle(policy_id=policy_id, fn=surrogate, control_bound=cfg.control_bound)


def make_band_policy(spec: BandTargetSpec = BandTargetSpec(), kp: float = 2.0, kd: float = 2.0,
                     control_bound: float = 1.0, policy_id: str = "band-pd") -> PolicyHandle:
    """Saturating PD tracking of the target-band centre for the 1-axis benchmark."""
    centre = 0.5 * (spec.target_low + spec.target_high)

    def band_pd(x: np.ndarray) -> np.ndarray:
        return -kp * (x[:, :1] - centre) - kd * x[:, 1:2]

    return PolicyHandle(policy_id=policy_id, fn=band_pd, control_bound=control_bound)


# =============================================================================
# COSTS
# =============================================================================

@dataclass(frozen=True, eq=False)
class CostSpec:
    """
    Trajectory cost for MPPI.

    kind selects the terms:
        fast-goal:        goal + target_weight * target exits + penalty_weight * violations
        soft-constraint:  goal + penalty_weight * violations
        plain-goal:       goal only
        recovery:         distance to the certified sets + barrier_weight * violations
    Every kind adds control_weight * ||u||^2.
    """
    kind: str
    goal_state: np.ndarray
    goal_weights: np.ndarray
    reward_fn: Callable[[np.ndarray], np.ndarray]
    constraint_fn: Callable[[np.ndarray], np.ndarray]
    control_weight: float = 0.01
    target_weight: float = 10.0
    penalty_weight: float = 50.0
    barrier_weight: float = 1000.0
    certificate: Optional[GlobalCertificate] = None
    local_certificates: Tuple["LocalCertificate", ...] = ()

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ContractViolationError(f"Unknown cost kind '{self.kind}', expected one of {COST_KINDS}")
        goal_state = np.asarray(self.goal_state, dtype=np.float64)
        goal_weights = np.asarray(self.goal_weights, dtype=np.float64)
        if goal_state.shape != goal_weights.shape:
            raise ContractViolationError("Goal state and goal weights must have the same shape")
        if np.any(goal_weights < 0):
            raise ContractViolationError("Goal weights must be nonnegative")
        object.__setattr__(self, "goal_state", goal_state)
        object.__setattr__(self, "goal_weights", goal_weights)
        object.__setattr__(self, "local_certificates", tuple(self.local_certificates))


def racing_cost(kind: str, racing: RacingSpec = RacingSpec(), gate_goal: Sequence[float] = (0.0, 1.0, 0.0),
                forward_speed: float = 1.0, position_weight: float = 1.0, velocity_weight: float = 0.1,
                **weights) -> CostSpec:
    """Racing cost: ego to a point beyond the gate centre at a forward cruise speed."""
    goal_state = np.zeros(12)
    goal_state[[0, 2, 4]] = gate_goal
    goal_state[3] = forward_speed
    goal_weights = np.zeros(12)
    goal_weights[[0, 2, 4]] = position_weight
    goal_weights[[1, 3, 5]] = velocity_weight
    return CostSpec(
        kind=kind,
        goal_state=goal_state,
        goal_weights=goal_weights,
        reward_fn=lambda x: racing_reward(x, racing),
        constraint_fn=lambda x: gate_aware_constraint(x, racing),
        **weights,
    )


def band_cost(kind: str, spec: BandTargetSpec = BandTargetSpec(), position_weight: float = 1.0,
              velocity_weight: float = 0.1, **weights) -> CostSpec:
    """Low-dimensional benchmark cost: target-band centre at rest."""
    centre = 0.5 * (spec.target_low + spec.target_high)
    return CostSpec(
        kind=kind,
        goal_state=np.array([centre, 0.0]),
        goal_weights=np.array([position_weight, velocity_weight]),
        reward_fn=lambda x: np.min(band_reward_components(x, spec), axis=-1),
        constraint_fn=lambda x: np.min(band_constraint_components(x, spec), axis=-1),
        **weights,
    )


def certified_distance(cert: Optional[GlobalCertificate], local_certificates: Sequence["LocalCertificate"],
                       x: np.ndarray) -> np.ndarray:
    """
    Distance from states (..., n) to the union of certified regions, 0 inside.

    Raises MissingCertificateError when neither the global certificate nor any local
    certificate holds a certified region.
    """
    has_global = cert is not None and cert.certified_count > 0
    if not has_global and not local_certificates:
        raise MissingCertificateError("Recovery needs a global or local certificate with a certified region")

    x = np.asarray(x, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    best = np.full(flat.shape[0], np.inf)
    if has_global:
        best = np.minimum(best, distance_to_certified(cert, flat))
    for lc in local_certificates:
        z = lc.reduction.reduce(flat)
        best = np.minimum(best, np.maximum(np.linalg.norm(z - lc.center, axis=-1) - lc.radius, 0.0))
    return best.reshape(x.shape[:-1])


def trajectory_costs(cost: CostSpec, states: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Cost of K rollouts, states (K, H+1, n) and agent controls (K, H, m)."""
    future = states[:, 1:]
    total = cost.control_weight * np.sum(controls ** 2, axis=(1, 2))
    violation = np.sum(np.maximum(-cost.constraint_fn(future), 0.0), axis=1)

    if cost.kind == "recovery":
        distance = certified_distance(cost.certificate, cost.local_certificates, future)
        return total + np.sum(distance, axis=1) + cost.barrier_weight * violation

    total = total + np.sum(((future - cost.goal_state) ** 2) * cost.goal_weights, axis=(1, 2))
    if cost.kind == "fast-goal":
        total = total + cost.target_weight * np.sum(np.maximum(-cost.reward_fn(future), 0.0), axis=1)
        total = total + cost.penalty_weight * violation
    elif cost.kind == "soft-constraint":
        total = total + cost.penalty_weight * violation
    return total


def recovery_cost(cert: Optional[GlobalCertificate], local_certificates: Sequence["LocalCertificate"],
                  states: np.ndarray, constraint_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                  barrier_weight: float = 1000.0) -> float:
    """
    Safety-oriented recovery cost of one trajectory.

    Sum over states of the distance to the nearest certified region, plus a barrier
    on constraint violations when a constraint function is supplied.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    value = float(np.sum(certified_distance(cert, local_certificates, states)))
    if constraint_fn is not None:
        value += barrier_weight * float(np.sum(np.maximum(-constraint_fn(states), 0.0)))
    return value


# =============================================================================
# MPPI
# =============================================================================

@dataclass(frozen=True)
class MPPIConfig:
    """Sampling MPPI parameters; temperature and noise may be zero (argmin / deterministic limits)."""
    horizon: int = 20
    samples: int = 256
    temperature: float = 1.0
    noise_std: Union[float, Tuple[float, ...]] = 0.3
    cost: str = "fast-goal"
    warm_start: str = "previous"
    seed: int = 0

    def __post_init__(self):
        if self.horizon < 1 or self.samples < 1:
            raise ContractViolationError("MPPI horizon and sample count must be >= 1")
        if self.temperature < 0:
            raise ContractViolationError(f"MPPI temperature must be nonnegative, got {self.temperature}")
        if np.any(np.asarray(self.noise_std) < 0):
            raise ContractViolationError("MPPI noise standard deviation must be nonnegative")
        if self.cost not in COST_KINDS:
            raise ContractViolationError(f"Unknown MPPI cost '{self.cost}'")
        if self.warm_start not in WARM_START_SOURCES:
            raise ContractViolationError(f"Unknown warm-start source '{self.warm_start}'")


@dataclass(frozen=True, eq=False)
class MPPIResult:
    control: np.ndarray       # first control of the averaged sequence (m,)
    sequence: np.ndarray      # averaged sequence (H, m)
    weights: np.ndarray       # (K,)
    costs: np.ndarray         # (K,)
    states: np.ndarray = field(repr=False)      # (K, H+1, n)
    candidates: np.ndarray = field(repr=False)  # (K, H, m)


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax weights w_k ~ exp(-(S_k - min S)/lambda); non-finite costs get weight 0."""
    costs = np.asarray(costs, dtype=np.float64)
    finite = np.isfinite(costs)
    if not np.any(finite):
        raise MPPIFailureError("Every MPPI rollout has a non-finite cost")
    shifted = np.where(finite, costs - np.min(costs[finite]), np.inf)

    if temperature < ARGMIN_TEMPERATURE:
        weights = np.zeros_like(costs)
        weights[int(np.argmin(shifted))] = 1.0
        return weights

    weights = np.exp(-shifted / temperature)
    return weights / np.sum(weights)


def simulate_controls(system: SystemSpec, x: np.ndarray, controls: np.ndarray) -> np.ndarray:
    """Roll out agent control sequences (K, H, m) from one state; returns (K, H+1, n)."""
    batch, horizon, _ = controls.shape
    states = np.empty((batch, horizon + 1, system.state_dim))
    states[:, 0] = x
    for t in range(horizon):
        states[:, t + 1] = step(system, states[:, t], compose_control(system, states[:, t], controls[:, t]))
    return states


def mppi_plan(cfg: MPPIConfig, cost: CostSpec, system: SystemSpec, x: np.ndarray,
              warm: Optional[np.ndarray] = None, rng: Optional[np.random.Generator] = None) -> MPPIResult:
    """
    One MPPI planning step.

    Args:
        cfg: MPPI parameters
        cost: Trajectory cost
        system: System (agent controls are composed with the opponent's when present)
        x: Current state (n,)
        warm: Mean control sequence (H, m); zeros when omitted
        rng: Generator for the control noise; a fresh one seeded from cfg.seed otherwise

    Returns:
        MPPIResult with the weighted-average sequence and its first control
    """
    x = np.asarray(x, dtype=np.float64)
    m = system.agent_control_dim
    if warm is None:
        mean = np.zeros((cfg.horizon, m))
    else:
        mean = np.asarray(warm, dtype=np.float64)
        if mean.shape != (cfg.horizon, m):
            raise ContractViolationError(f"Warm start has shape {mean.shape}, expected {(cfg.horizon, m)}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng

    sigma = np.broadcast_to(np.asarray(cfg.noise_std, dtype=np.float64), (m,))
    noise = rng.standard_normal((cfg.samples, cfg.horizon, m)) * sigma
    # rollout 0 follows the mean itself
    noise[0] = 0.0
    candidates = np.clip(mean + noise, -system.control_bound, system.control_bound)

    states = simulate_controls(system, x, candidates)
    costs = trajectory_costs(cost, states, candidates)
    weights = mppi_weights(costs, cfg.temperature)
    sequence = np.einsum("k,khm->hm", weights, candidates)

    return MPPIResult(control=sequence[0].copy(), sequence=sequence, weights=weights,
                      costs=costs, states=states, candidates=candidates)


def mppi_step(cfg: MPPIConfig, cost: CostSpec, system: SystemSpec, x: np.ndarray,
              warm: Optional[np.ndarray] = None,
              rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, np.ndarray]:
    """First control and averaged sequence of one MPPI step."""
    result = mppi_plan(cfg, cost, system, x, warm, rng)
    return result.control, result.sequence


def shift_warm_start(sequence: np.ndarray) -> np.ndarray:
    """Receding-horizon shift: drop the first control, repeat the last one."""
    sequence = np.asarray(sequence, dtype=np.float64)
    return np.concatenate([sequence[1:], sequence[-1:]], axis=0)


def unroll_policy(system: SystemSpec, policy: PolicyHandle, x: np.ndarray, horizon: int) -> np.ndarray:
    """Agent controls (H, m) of the closed-loop policy rollout from x."""
    _, controls = rollout_batch(system, np.asarray(x, dtype=np.float64)[None], horizon, policy=policy)
    return controls[0, :, :system.agent_control_dim]


def sequence_cost(cost: CostSpec, system: SystemSpec, x: np.ndarray, sequence: np.ndarray) -> float:
    """Cost of a single agent control sequence (H, m) from x."""
    sequence = np.clip(np.asarray(sequence, dtype=np.float64), -system.control_bound, system.control_bound)[None]
    return float(trajectory_costs(cost, simulate_controls(system, x, sequence), sequence)[0])


# =============================================================================
# CBF SAFETY FILTER
# =============================================================================

@dataclass(frozen=True)
class CBFConfig:
    """Discrete CBF condition h(x_{t+k}) >= (1 - alpha*dt)^k h(x_t) under a held control."""
    alpha: float = 1.0            # class-K gain (1/s)
    lookahead: int = 2            # k; position after one Euler step does not depend on u
    gate_walls: bool = True
    grid_points: int = 11         # per-axis resolution of the warm-start grid
    feasibility_tol: float = 1e-9

    def __post_init__(self):
        if self.alpha <= 0 or self.lookahead < 1 or self.grid_points < 2:
            raise ContractViolationError("CBF needs alpha > 0, lookahead >= 1 and grid_points >= 2")


def _predict_held(system: SystemSpec, x: np.ndarray, u_ego: np.ndarray, steps: int) -> np.ndarray:
    """Joint state after holding ego controls (B, 3) for k steps; the opponent keeps its own loop."""
    states = np.broadcast_to(x, (u_ego.shape[0], x.size)).copy()
    for _ in range(steps):
        if system.opponent is not None:
            u_opponent = opponent_lqr(system.opponent, states[:, OPPONENT_SLICE])
        else:
            u_opponent = np.zeros((states.shape[0], system.control_dim - 3))
        full = np.concatenate([np.clip(u_ego, -system.control_bound, system.control_bound), u_opponent], axis=1)
        states = step(system, states, full)
    return states


def _barriers(x: np.ndarray, racing: RacingSpec, walls: bool) -> np.ndarray:
    h = downwash_margin(x, racing)[..., None]
    if walls:
        h = np.concatenate([h, gate_wall_margins(x, racing)], axis=-1)
    return h


def cbf_slack(system: SystemSpec, x: np.ndarray, u_ego: np.ndarray, cfg: CBFConfig = CBFConfig(),
              racing: RacingSpec = RacingSpec()) -> np.ndarray:
    """Per-barrier slack of the CBF condition for candidate controls (B, 3); >= 0 means satisfied."""
    x = np.asarray(x, dtype=np.float64)
    walls = cfg.gate_walls and x[2] < 0.0
    decay = (1.0 - cfg.alpha * system.dt) ** cfg.lookahead
    h_now = _barriers(x, racing, walls)
    h_next = _barriers(_predict_held(system, x, np.atleast_2d(u_ego), cfg.lookahead), racing, walls)
    return h_next - decay * h_now


def _control_grid(points: int, bound: float) -> np.ndarray:
    axis = np.linspace(-bound, bound, points)
    mesh = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _repair(system, x, cfg, racing, candidate, feasible, iterations=40):
    """Move an almost-feasible candidate towards a feasible point until the condition holds."""
    lo, hi = 0.0, 1.0
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        point = candidate + mid * (feasible - candidate)
        if np.min(cbf_slack(system, x, point, cfg, racing)) >= -cfg.feasibility_tol:
            hi = mid
        else:
            lo = mid
    return candidate + hi * (feasible - candidate)


def cbf_filter(system: SystemSpec, x: np.ndarray, u_nom: np.ndarray, cfg: CBFConfig = CBFConfig(),
               racing: RacingSpec = RacingSpec()) -> np.ndarray:
    """
    Minimal-deviation safety filter for the ego control.

    Solves min ||u - u_nom||^2 subject to the CBF condition and the control box with
    SLSQP started from u_nom and from the best feasible point of a coarse grid. When
    no control satisfies the condition, returns the control with the largest worst-case
    slack.

    Args:
        system: 12D joint racing system
        x: Current joint state
        u_nom: Nominal ego control (3,)

    Returns:
        Filtered ego control (3,), inside the control box
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (12,):
        raise ContractViolationError(f"CBF filter needs a single 12D joint state, got {x.shape}")
    bound = system.control_bound
    u_nom = np.clip(np.asarray(u_nom, dtype=np.float64), -bound, bound)

    if np.min(cbf_slack(system, x, u_nom, cfg, racing)) >= -cfg.feasibility_tol:
        return u_nom

    grid = _control_grid(cfg.grid_points, bound)
    worst = np.min(cbf_slack(system, x, grid, cfg, racing), axis=1)
    feasible = worst >= -cfg.feasibility_tol
    # QP scaled so the control enters the constraint with O(1) sensitivity
    scale = 1.0 / (system.dt ** cfg.lookahead)

    starts = [u_nom, np.zeros(3)]
    best_grid = None
    if np.any(feasible):
        distances = np.linalg.norm(grid - u_nom, axis=1)
        distances[~feasible] = np.inf
        best_grid = grid[int(np.argmin(distances))]
        starts.insert(0, best_grid)

    candidates = [] if best_grid is None else [best_grid]
    for start in starts:
        result = minimize(
            lambda u: float(np.sum((u - u_nom) ** 2)),
            start,
            jac=lambda u: 2.0 * (u - u_nom),
            method="SLSQP",
            bounds=[(-bound, bound)] * 3,
            constraints=[{"type": "ineq", "fun": lambda u: scale * cbf_slack(system, x, u, cfg, racing)[0]}],
            options={"maxiter": 200, "ftol": 1e-12},
        )
        u = np.clip(result.x, -bound, bound)
        if np.min(cbf_slack(system, x, u, cfg, racing)) >= -cfg.feasibility_tol:
            candidates.append(u)
        elif best_grid is not None:
            candidates.append(_repair(system, x, cfg, racing, u, best_grid))

    if candidates:
        return min(candidates, key=lambda u: float(np.sum((u - u_nom) ** 2)))

    logger.warning("CBF condition infeasible on the control box, using the safest control")
    return grid[int(np.argmax(worst))]


def cbf_filtered_policy(policy: PolicyHandle, system: SystemSpec, cfg: CBFConfig = CBFConfig(),
                        racing: RacingSpec = RacingSpec()) -> PolicyHandle:
    """Wrap a policy with the CBF filter (row by row)."""
    def filtered(x: np.ndarray) -> np.ndarray:
        nominal = policy.evaluate(x)
        return np.stack([cbf_filter(system, xi, ui, cfg, racing) for xi, ui in zip(x, nominal)])

    return PolicyHandle(policy_id=f"{policy.policy_id}+cbf", fn=filtered,
                        control_bound=policy.control_bound, deterministic=policy.deterministic)
