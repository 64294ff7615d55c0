"""
Exhaustive open-loop oracle for the low-dimensional benchmark.

The best reach-avoid value over all open-loop sequences on a discretised control
set is a lower bound on the true value function and the ground truth used by the
guarantee studies. Enumeration is breadth-first over the sequence tree, carrying
the running constraint minimum and the best measure seen along each branch.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.interpolate import RegularGridInterpolator
from tqdm import tqdm

from ..core.errors import BudgetExceededError, ContractViolationError
from ..core.reach_measure import RewardConstraintSpec
from ..core.systems import SystemSpec, compose_control, step

logger = logging.getLogger(__name__)


def control_grid(levels: int, n_axes: int, bound: float) -> np.ndarray:
    """Cartesian product of `levels` evenly spaced values in [-bound, bound] per axis."""
    if levels < 2:
        raise ContractViolationError(f"Need at least 2 control levels, got {levels}")
    axis = np.linspace(-bound, bound, levels)
    mesh = np.meshgrid(*([axis] * n_axes), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def sequence_count(controls: np.ndarray, horizon: int) -> int:
    return int(controls.shape[0]) ** int(horizon)


def brute_force_values(system: SystemSpec, spec: RewardConstraintSpec, x0: np.ndarray, horizon: int,
                       controls: np.ndarray, budget: int = 200_000) -> np.ndarray:
    """
    max over open-loop control sequences of sup_t g_gamma, for initial states (B, n).

    Args:
        system: Low-dimensional system
        spec: Reward/constraint spec
        x0: Initial states (B, n)
        horizon: T
        controls: Discretised control set (L, m)
        budget: Maximum number of sequences L^T

    Returns:
        Oracle values (B,)
    """
    controls = np.atleast_2d(np.asarray(controls, dtype=np.float64))
    count = sequence_count(controls, horizon)
    if count > budget:
        raise BudgetExceededError(f"{controls.shape[0]}^{horizon} = {count} sequences exceed budget {budget}")

    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    levels = controls.shape[0]
    gamma = spec.gamma

    states = x0[:, None, :]
    running_c = spec.constraint(states)
    best = np.minimum(spec.reward(states), running_c)

    for t in range(1, horizon + 1):
        batch, nodes, n = states.shape
        expanded = np.repeat(states, levels, axis=1)
        u = np.tile(controls, (nodes, 1))
        u = np.broadcast_to(u, (batch,) + u.shape)
        states = step(system, expanded, compose_control(system, expanded, u))
        discount = gamma ** t
        running_c = np.minimum(np.repeat(running_c, levels, axis=1), discount * spec.constraint(states))
        measure = np.minimum(discount * spec.reward(states), running_c)
        best = np.maximum(np.repeat(best, levels, axis=1), measure)

    return np.max(best, axis=1)


def brute_force_value(system: SystemSpec, spec: RewardConstraintSpec, x0: np.ndarray, horizon: int,
                      controls: np.ndarray, budget: int = 200_000) -> float:
    """Oracle value of a single initial state."""
    return float(brute_force_values(system, spec, np.asarray(x0)[None], horizon, controls, budget)[0])


@dataclass(eq=False)
class OracleTable:
    """Oracle values on a state grid, with exact evaluation for off-grid queries."""
    axes: Tuple[np.ndarray, ...]
    values: np.ndarray
    horizon: int
    controls: np.ndarray
    system: SystemSpec = field(repr=False)
    spec: RewardConstraintSpec = field(repr=False)
    budget: int = 200_000
    _interpolator: Optional[RegularGridInterpolator] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        shape = tuple(axis.size for axis in self.axes)
        if self.values.shape != shape:
            raise ContractViolationError(f"Oracle values have shape {self.values.shape}, grid is {shape}")
        if not np.all(np.isfinite(self.values)):
            raise ContractViolationError("Oracle table contains non-finite values")
        self._interpolator = RegularGridInterpolator(self.axes, self.values, method="linear")

    @property
    def low(self) -> np.ndarray:
        return np.array([axis[0] for axis in self.axes])

    @property
    def high(self) -> np.ndarray:
        return np.array([axis[-1] for axis in self.axes])

    @property
    def resolution(self) -> np.ndarray:
        return np.array([axis[1] - axis[0] if axis.size > 1 else 0.0 for axis in self.axes])

    def covers(self, low: Sequence[float], high: Sequence[float]) -> bool:
        return bool(np.all(self.low <= np.asarray(low) + 1e-12) and np.all(np.asarray(high) <= self.high + 1e-12))

    def interpolate(self, x: np.ndarray) -> np.ndarray:
        return self._interpolator(np.atleast_2d(x))

    def exact(self, x: np.ndarray, chunk: int = 64) -> np.ndarray:
        """Brute-force oracle at arbitrary states (B, n)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.empty(x.shape[0])
        for start in range(0, x.shape[0], chunk):
            out[start:start + chunk] = brute_force_values(self.system, self.spec, x[start:start + chunk],
                                                          self.horizon, self.controls, self.budget)
        return out

    def rows(self):
        mesh = np.meshgrid(*self.axes, indexing="ij")
        columns = {f"x{i}": m.ravel() for i, m in enumerate(mesh)}
        columns["value"] = self.values.ravel()
        return columns


def build_oracle_table(system: SystemSpec, spec: RewardConstraintSpec, low: Sequence[float], high: Sequence[float],
                       resolution: Sequence[int], horizon: int, levels: int = 3, budget: int = 200_000,
                       chunk: int = 64, n_jobs: int = 1, show_progress: bool = False) -> OracleTable:
    """
    Tabulate the oracle on a regular grid.

    Args:
        resolution: Grid nodes per axis
        levels: Control levels per axis
        n_jobs: joblib workers over grid chunks
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if low.size != system.state_dim or len(resolution) != system.state_dim:
        raise ContractViolationError("Oracle grid must have one axis per state coordinate")

    controls = control_grid(levels, system.control_dim, system.control_bound)
    count = sequence_count(controls, horizon)
    if count > budget:
        raise BudgetExceededError(f"{controls.shape[0]}^{horizon} = {count} sequences exceed budget {budget}")

    axes = tuple(np.linspace(lo, hi, int(k)) for lo, hi, k in zip(low, high, resolution))
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    logger.info(f"Building oracle over {nodes.shape[0]} nodes, {count} sequences each")

    chunks = [nodes[i:i + chunk] for i in range(0, nodes.shape[0], chunk)]
    results = Parallel(n_jobs=n_jobs)(
        delayed(brute_force_values)(system, spec, c, horizon, controls, budget)
        for c in tqdm(chunks, desc="Oracle grid", disable=not show_progress)
    )
    values = np.concatenate(results).reshape(mesh[0].shape)

    return OracleTable(axes=axes, values=values, horizon=horizon, controls=controls,
                       system=system, spec=spec, budget=budget)
