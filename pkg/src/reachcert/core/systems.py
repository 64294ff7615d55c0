"""
Dynamical systems used by the verification stack.

This module provides:
- Linear discrete-time systems x_{t+1} = A x_t + B u_t (generic test systems)
- Forward-Euler double-integrator chains (3D drones, 1-axis benchmark)
- The 12D joint racing system: ego drone + opponent drone driven by a clamped LQR
- Closed-loop and open-loop rollouts, scalar and batched
- Reduced coordinates (linear reduction map with a lift back to full states)

State layout per drone follows [p_x, v_x, p_y, v_y, p_z, v_z]; the joint racing
state is the ego block followed by the opponent block.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import solve_discrete_are

from .errors import ContractViolationError

if TYPE_CHECKING:
    from .controllers import PolicyHandle

logger = logging.getLogger(__name__)

DRONE_LABELS = ("px", "vx", "py", "vy", "pz", "vz")
RACING_LABELS = tuple(f"{name}_e" for name in DRONE_LABELS) + tuple(f"{name}_o" for name in DRONE_LABELS)
EGO_SLICE = slice(0, 6)
OPPONENT_SLICE = slice(6, 12)


@dataclass(frozen=True, eq=False)
class OpponentPolicyConfig:
    """Clamped LQR tracking controller for the 6D opponent subsystem."""
    gain: np.ndarray          # (3, 6) feedback gain K
    goal: np.ndarray          # (6,) goal state [p_x, v_x, p_y, v_y, p_z, v_z]
    clamp: float = 1.0        # per-axis acceleration bound (m/s^2)

    def __post_init__(self):
        gain = np.asarray(self.gain, dtype=np.float64)
        goal = np.asarray(self.goal, dtype=np.float64)
        if gain.shape != (3, 6):
            raise ContractViolationError(f"Opponent gain must be 3x6, got {gain.shape}")
        if goal.shape != (6,):
            raise ContractViolationError(f"Opponent goal must have 6 entries, got {goal.shape}")
        if not self.clamp > 0:
            raise ContractViolationError(f"Opponent clamp must be positive, got {self.clamp}")
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "goal", goal)


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """
    Discrete-time system description.

    For kind == "double_integrator" the state is a chain of (position, velocity)
    pairs, one per control axis, stepped with forward Euler. For kind == "linear"
    the explicit A, B matrices are used. A and B are always populated so that
    linear analysis (e.g. deviation propagation) works for both kinds.
    """
    name: str
    state_dim: int
    control_dim: int
    control_bound: float
    dt: float
    kind: str
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    state_labels: Tuple[str, ...] = ()
    opponent: Optional[OpponentPolicyConfig] = None

    def __post_init__(self):
        if self.state_dim < 1 or self.control_dim < 1:
            raise ContractViolationError("State and control dimensions must be >= 1")
        if not self.dt > 0:
            raise ContractViolationError(f"Time step must be positive, got {self.dt}")
        if self.kind not in ("double_integrator", "linear"):
            raise ContractViolationError(f"Unknown system kind: {self.kind}")
        if self.A.shape != (self.state_dim, self.state_dim) or self.B.shape != (self.state_dim, self.control_dim):
            raise ContractViolationError(f"A/B shapes {self.A.shape}/{self.B.shape} inconsistent with n={self.state_dim}, m={self.control_dim}")
        if self.opponent is not None:
            if self.state_dim != 12 or self.control_dim != 6:
                raise ContractViolationError("An opponent can only be attached to the 12D joint racing system")
            if self.opponent.clamp > self.control_bound:
                raise ContractViolationError(f"Opponent clamp {self.opponent.clamp} exceeds control bound {self.control_bound}")

    @property
    def agent_control_dim(self) -> int:
        """Dimension of the control a policy emits (ego only when an opponent is attached)."""
        return self.control_dim - 3 if self.opponent is not None else self.control_dim


def double_integrator_system(n_axes: int, dt: float = 0.1, control_bound: float = 1.0,
                             name: str = "double-integrator", labels: Sequence[str] = ()) -> SystemSpec:
    """Forward-Euler double integrator with one (p, v) pair per axis."""
    block_a = np.array([[1.0, dt], [0.0, 1.0]])
    block_b = np.array([[0.0], [dt]])
    A = np.kron(np.eye(n_axes), block_a)
    B = np.kron(np.eye(n_axes), block_b)
    return SystemSpec(
        name=name,
        state_dim=2 * n_axes,
        control_dim=n_axes,
        control_bound=control_bound,
        dt=dt,
        kind="double_integrator",
        A=A,
        B=B,
        state_labels=tuple(labels),
    )


def racing_system(opponent: Optional[OpponentPolicyConfig], dt: float = 0.1, control_bound: float = 1.0) -> SystemSpec:
    """12D joint ego/opponent racing system; the opponent closes its own loop via LQR."""
    base = double_integrator_system(6, dt=dt, control_bound=control_bound)
    return SystemSpec(
        name="racing-12d",
        state_dim=12,
        control_dim=6,
        control_bound=control_bound,
        dt=dt,
        kind="double_integrator",
        A=base.A,
        B=base.B,
        state_labels=RACING_LABELS,
        opponent=opponent,
    )


def linear_system(A: np.ndarray, B: np.ndarray, dt: float = 0.1,
                  control_bound: float = np.inf, name: str = "linear") -> SystemSpec:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    return SystemSpec(
        name=name,
        state_dim=A.shape[0],
        control_dim=B.shape[1],
        control_bound=control_bound,
        dt=dt,
        kind="linear",
        A=A,
        B=B,
    )


def _check_dims(system: SystemSpec, x: np.ndarray, u: np.ndarray) -> None:
    if x.shape[-1] != system.state_dim:
        raise ContractViolationError(f"State has dimension {x.shape[-1]}, system {system.name} expects {system.state_dim}")
    if u.shape[-1] != system.control_dim:
        raise ContractViolationError(f"Control has dimension {u.shape[-1]}, system {system.name} expects {system.control_dim}")


def clamp_control(system: SystemSpec, u: np.ndarray) -> np.ndarray:
    return np.clip(u, -system.control_bound, system.control_bound)


def step(system: SystemSpec, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    Successor state x_{t+1} = f(x_t, u_t).

    Works on single states or on arrays with leading batch axes.

    Args:
        system: System description
        x: State(s), shape (..., n)
        u: Full control(s), already clamped, shape (..., m)

    Returns:
        Successor state(s), shape (..., n)
    """
    x = np.asarray(x, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_dims(system, x, u)

    if system.kind == "double_integrator":
        pairs = x.reshape(x.shape[:-1] + (system.control_dim, 2))
        position = pairs[..., 0]
        velocity = pairs[..., 1]
        next_pairs = np.stack([position + velocity * system.dt, velocity + u * system.dt], axis=-1)
        return next_pairs.reshape(x.shape)

    return x @ system.A.T + u @ system.B.T


def opponent_lqr(config: OpponentPolicyConfig, x_o: np.ndarray) -> np.ndarray:
    """u = clamp(-K (x_o - x_goal)) for one or many 6D opponent states."""
    x_o = np.asarray(x_o, dtype=np.float64)
    if x_o.shape[-1] != 6:
        raise ContractViolationError(f"Opponent state must be 6D, got {x_o.shape[-1]}")
    u = -(x_o - config.goal) @ config.gain.T
    return np.clip(u, -config.clamp, config.clamp)


def compose_control(system: SystemSpec, x: np.ndarray, u_agent: np.ndarray) -> np.ndarray:
    """Clamp the agent control and append the opponent's LQR control when present."""
    u_agent = clamp_control(system, np.asarray(u_agent, dtype=np.float64))
    if system.opponent is None:
        return u_agent
    u_opponent = opponent_lqr(system.opponent, np.asarray(x)[..., OPPONENT_SLICE])
    return np.concatenate([u_agent, u_opponent], axis=-1)


def lqr_gain(dt: float, q_pos: float, q_vel: float, r: float) -> np.ndarray:
    """
    Infinite-horizon discrete LQR gain for the 1-axis Euler double integrator.

    Returns:
        Gain k of shape (2,) such that u = -k @ [p, v]
    """
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    Q = np.diag([q_pos, q_vel])
    R = np.array([[r]])
    P = solve_discrete_are(A, B, Q, R)
    K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    return K.ravel()


def finite_horizon_gain(dt: float, q_pos: float, q_vel: float, r: float, horizon: int) -> np.ndarray:
    """First-stage gain of the finite-horizon LQR obtained by backward Riccati recursion."""
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])
    Q = np.diag([q_pos, q_vel])
    R = np.array([[r]])
    P = Q.copy()
    K = np.zeros((1, 2))
    for _ in range(horizon):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
    return K.ravel()


def axis_gain_matrix(axis_gain: np.ndarray, n_axes: int = 3) -> np.ndarray:
    """Block gain applying the same 1-axis gain (k_p, k_v) independently on every axis."""
    return np.kron(np.eye(n_axes), np.asarray(axis_gain, dtype=np.float64).reshape(1, 2))


def make_opponent_config(dt: float, q_pos: float, q_vel: float, r: float,
                         goal: Sequence[float], clamp: float = 1.0) -> OpponentPolicyConfig:
    gain = axis_gain_matrix(lqr_gain(dt, q_pos, q_vel, r))
    logger.debug(f"Opponent LQR gain per axis: {gain[0, :2]}")
    return OpponentPolicyConfig(gain=gain, goal=np.asarray(goal, dtype=np.float64), clamp=clamp)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States (T+1, n) and full controls (T, m) of one rollout."""
    states: np.ndarray
    controls: np.ndarray
    dt: float

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


def rollout_batch(system: SystemSpec, x0: np.ndarray, horizon: int,
                  policy: Optional["PolicyHandle"] = None,
                  controls: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batched rollout from initial states x0 of shape (B, n).

    Closed-loop mode (policy given) queries the policy at every visited state;
    open-loop mode (controls given, shape (B, T, m)) replays full control sequences.

    Returns:
        states (B, T+1, n), full controls (B, T, m)
    """
    if horizon < 1:
        raise ContractViolationError(f"Rollout horizon must be >= 1, got {horizon}")
    if (policy is None) == (controls is None):
        raise ContractViolationError("Exactly one of policy or controls must be supplied")

    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    batch = x0.shape[0]
    if x0.shape[-1] != system.state_dim:
        raise ContractViolationError(f"Initial state has dimension {x0.shape[-1]}, expected {system.state_dim}")

    states = np.empty((batch, horizon + 1, system.state_dim))
    applied = np.empty((batch, horizon, system.control_dim))
    states[:, 0] = x0

    if controls is not None:
        controls = np.asarray(controls, dtype=np.float64)
        if controls.shape != (batch, horizon, system.control_dim):
            raise ContractViolationError(f"Control sequence shape {controls.shape} != {(batch, horizon, system.control_dim)}")

    for t in range(horizon):
        if controls is not None:
            u = controls[:, t]
        else:
            u = compose_control(system, states[:, t], policy.evaluate(states[:, t]))
        applied[:, t] = u
        states[:, t + 1] = step(system, states[:, t], u)

    return states, applied


def rollout(system: SystemSpec, x0: np.ndarray, horizon: int,
            policy: Optional["PolicyHandle"] = None,
            controls: Optional[np.ndarray] = None) -> Trajectory:
    """Single-trajectory rollout; see rollout_batch for the two modes."""
    batch_controls = None if controls is None else np.asarray(controls, dtype=np.float64)[None]
    states, applied = rollout_batch(system, np.asarray(x0, dtype=np.float64)[None], horizon,
                                    policy=policy, controls=batch_controls)
    return Trajectory(states=states[0], controls=applied[0], dt=system.dt)


@dataclass(frozen=True, eq=False)
class ReductionMap:
    """
    Linear reduced coordinates z = R x with a lift back to full states.

    The lift keeps every coordinate of a reference state except the declared free
    coordinates, which are solved so that R(lift(z)) == z. R restricted to the free
    columns must be square and invertible.
    """
    matrix: np.ndarray
    free: Tuple[int, ...]
    reference: np.ndarray
    labels: Tuple[str, ...] = ()
    _lift_matrix: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        reference = np.asarray(self.reference, dtype=np.float64)
        free = tuple(int(i) for i in self.free)
        if len(free) != R.shape[0]:
            raise ContractViolationError(f"Need {R.shape[0]} free coordinates, got {len(free)}")
        if reference.shape != (R.shape[1],):
            raise ContractViolationError(f"Reference state must have {R.shape[1]} entries")
        block = R[:, free]
        if abs(np.linalg.det(block)) < 1e-12:
            raise ContractViolationError("Reduction matrix restricted to the free coordinates is singular")
        lift = np.zeros((R.shape[1], R.shape[0]))
        lift[list(free)] = np.linalg.inv(block)
        object.__setattr__(self, "matrix", R)
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "free", free)
        object.__setattr__(self, "_lift_matrix", lift)

    @classmethod
    def identity(cls, dim: int, labels: Sequence[str] = ()) -> "ReductionMap":
        return cls(matrix=np.eye(dim), free=tuple(range(dim)), reference=np.zeros(dim), labels=tuple(labels))

    @property
    def reduced_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def state_dim(self) -> int:
        return self.matrix.shape[1]

    def reduce(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.matrix.T

    def lift(self, z: np.ndarray, reference: Optional[np.ndarray] = None) -> np.ndarray:
        ref = self.reference if reference is None else np.asarray(reference, dtype=np.float64)
        z = np.asarray(z, dtype=np.float64)
        return ref + (z - ref @ self.matrix.T) @ self._lift_matrix.T

    def drift(self, x: np.ndarray, reference: np.ndarray) -> np.ndarray:
        """Norm of the part of x - reference that the reduced coordinates do not see."""
        x = np.asarray(x, dtype=np.float64)
        return np.linalg.norm(x - self.lift(self.reduce(x), reference=reference), axis=-1)
