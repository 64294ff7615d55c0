"""
Offline coarse global certification.

A covering of nominal points (grid or Sobol set over the certification box, in
reduced coordinates) is rolled out once under the policy. Lipschitz-deflated
margins along each nominal rollout give the certified lower bound V_check; a
nominal with V_check >= 0 certifies the eps_x-ball around it. The certified
points are indexed with an exact KD-tree for membership and boundary queries.
"""

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc
from sklearn.neighbors import KDTree
from tqdm import tqdm

from .errors import BudgetExceededError, ContractViolationError, NoBoundaryPointsError
from .reach_measure import RewardConstraintSpec, ra_measure_series
from .scenario_engine import SensitivityProfile
from .systems import ReductionMap, SystemSpec, rollout_batch

if TYPE_CHECKING:
    from .controllers import PolicyHandle

logger = logging.getLogger(__name__)

BOUNDARY_NEIGHBOR_FACTOR = 1.5


@dataclass(frozen=True, eq=False)
class CertifiedMargins:
    """Deflated reward and constraint margins along a nominal rollout."""
    rewards: np.ndarray
    constraints: np.ndarray


def certified_margins(spec: RewardConstraintSpec, states: np.ndarray, profile: SensitivityProfile) -> CertifiedMargins:
    """
    r_check_t = r(xbar_t) - L_r dx*_t and c_check_t = c(xbar_t) - L_c dx*_t.

    In component-wise mode each margin component is deflated with its own constant
    before taking the minimum, which is never looser than the scalar form.
    """
    states = np.asarray(states, dtype=np.float64)
    steps = states.shape[-2]
    if profile.horizon + 1 < steps:
        raise ContractViolationError(f"Profile horizon {profile.horizon} shorter than rollout of {steps - 1} steps")
    deltas = profile.bounds[:steps]

    if spec.componentwise:
        rewards = np.min(spec.reward_components(states) - deltas[:, None] * spec.reward_lipschitz, axis=-1)
        constraints = np.min(spec.constraint_components(states) - deltas[:, None] * spec.constraint_lipschitz, axis=-1)
    else:
        rewards = spec.reward(states) - spec.L_r * deltas
        constraints = spec.constraint(states) - spec.L_c * deltas
    return CertifiedMargins(rewards=rewards, constraints=constraints)


def certified_value(spec: RewardConstraintSpec, states: np.ndarray, profile: SensitivityProfile) -> np.ndarray:
    """V_check = max_t min{gamma^t r_check_t, min_tau gamma^tau c_check_tau} for nominal rollouts."""
    margins = certified_margins(spec, states, profile)
    return np.max(ra_measure_series(margins.rewards, margins.constraints, spec.gamma), axis=-1)


def certify_point(spec: RewardConstraintSpec, system: SystemSpec, policy: "PolicyHandle",
                  profile: SensitivityProfile, x0: np.ndarray, horizon: Optional[int] = None) -> float:
    """Certified lower bound of the reach-avoid value at one nominal state."""
    horizon = profile.horizon if horizon is None else horizon
    if profile.horizon < horizon:
        raise ContractViolationError(f"Profile horizon {profile.horizon} < requested horizon {horizon}")
    states, _ = rollout_batch(system, np.asarray(x0, dtype=np.float64)[None], horizon, policy=policy)
    return float(certified_value(spec, states, profile)[0])


def certify_states(spec: RewardConstraintSpec, system: SystemSpec, policy: "PolicyHandle",
                   profile: SensitivityProfile, x0: np.ndarray, horizon: Optional[int] = None,
                   batch_size: int = 4096, show_progress: bool = False) -> np.ndarray:
    """Vectorised certify_point over many nominal states, processed in chunks."""
    horizon = profile.horizon if horizon is None else horizon
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    values = np.empty(x0.shape[0])
    starts = range(0, x0.shape[0], batch_size)
    for start in tqdm(starts, desc="Certifying covering", disable=not show_progress):
        chunk = x0[start:start + batch_size]
        states, _ = rollout_batch(system, chunk, horizon, policy=policy)
        values[start:start + chunk.shape[0]] = certified_value(spec, states, profile)
    return values


def covering_points(low: Sequence[float], high: Sequence[float], spacing: float, method: str = "grid",
                    max_points: int = 1_000_000, seed: int = 0) -> np.ndarray:
    """
    Nominal points covering a box.

    The grid is centred in the box with the given spacing on every axis; the Sobol
    variant draws as many scrambled low-discrepancy points as the grid would hold.
    """
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if low.shape != high.shape or np.any(high < low):
        raise ContractViolationError("Covering box needs high >= low on every axis")
    if not spacing > 0:
        raise ContractViolationError(f"Covering spacing must be positive, got {spacing}")

    span = high - low
    counts = np.floor(span / spacing + 1e-9).astype(int) + 1
    total = int(np.prod(counts.astype(float)))
    if total > max_points:
        raise BudgetExceededError(f"Covering needs {total} points, budget is {max_points}")

    if method == "grid":
        offsets = (span - (counts - 1) * spacing) / 2.0
        axes = [low[i] + offsets[i] + spacing * np.arange(counts[i]) for i in range(low.size)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)
    if method == "sobol":
        sampler = qmc.Sobol(d=low.size, scramble=True, seed=seed)
        return qmc.scale(sampler.random(total), low, high) if np.all(span > 0) else low + sampler.random(total) * span
    raise ContractViolationError(f"Unknown covering method: {method}")


def compute_boundary_flags(points: np.ndarray, certified: np.ndarray, spacing: float,
                           low: np.ndarray, high: np.ndarray) -> np.ndarray:
    """
    A certified nominal is on the boundary iff a covering neighbour within 1.5x spacing
    is uncertified, or a grid neighbour would fall outside the domain.
    """
    boundary = np.zeros(points.shape[0], dtype=bool)
    certified_idx = np.flatnonzero(certified)
    if certified_idx.size == 0:
        return boundary

    tol = 1e-9 * max(1.0, spacing)
    near_edge = np.any((points[certified_idx] - spacing < low - tol) | (points[certified_idx] + spacing > high + tol), axis=1)

    tree = KDTree(points)
    neighborhoods = tree.query_radius(points[certified_idx], r=BOUNDARY_NEIGHBOR_FACTOR * spacing)
    has_uncertified = np.array([not np.all(certified[nbrs]) for nbrs in neighborhoods], dtype=bool)

    boundary[certified_idx] = near_edge | has_uncertified
    return boundary


@dataclass(eq=False)
class GlobalCertificate:
    """
    Finite ball covering of V_global.

    points are nominal states in reduced coordinates; values holds V_check for every
    nominal; certified = values >= 0. Immutable once built; queries are read-only.
    """
    points: np.ndarray
    values: np.ndarray
    boundary: np.ndarray
    eps_x: float
    spacing: float
    gamma: float
    horizon: int
    policy_id: str
    profile: SensitivityProfile
    domain_low: np.ndarray
    domain_high: np.ndarray
    reduction: ReductionMap
    _certified_idx: np.ndarray = field(init=False, repr=False)
    _boundary_idx: np.ndarray = field(init=False, repr=False)
    _certified_tree: Optional[KDTree] = field(init=False, repr=False, default=None)
    _boundary_tree: Optional[KDTree] = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.values = np.asarray(self.values, dtype=np.float64)
        self.boundary = np.asarray(self.boundary, dtype=bool)
        self.domain_low = np.asarray(self.domain_low, dtype=np.float64)
        self.domain_high = np.asarray(self.domain_high, dtype=np.float64)
        if not (self.points.shape[0] == self.values.shape[0] == self.boundary.shape[0]):
            raise ContractViolationError("Certificate record arrays have inconsistent lengths")
        if np.any(self.boundary & ~self.certified):
            raise ContractViolationError("Boundary flags may only be set on certified points")

        self._certified_idx = np.flatnonzero(self.certified)
        self._boundary_idx = np.flatnonzero(self.boundary)
        if self._certified_idx.size:
            self._certified_tree = KDTree(self.points[self._certified_idx])
        if self._boundary_idx.size:
            self._boundary_tree = KDTree(self.points[self._boundary_idx])

    @property
    def certified(self) -> np.ndarray:
        return self.values >= 0.0

    @property
    def certified_points(self) -> np.ndarray:
        return self.points[self._certified_idx]

    @property
    def boundary_points(self) -> np.ndarray:
        return self.points[self._boundary_idx]

    @property
    def certified_count(self) -> int:
        return int(self._certified_idx.size)

    @property
    def boundary_count(self) -> int:
        return int(self._boundary_idx.size)

    def in_domain(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        return np.all((z >= self.domain_low) & (z <= self.domain_high), axis=-1)

    def nearest_certified(self, z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Distance to and index (into points) of the nearest certified nominal, for reduced queries (B, k)."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if self._certified_tree is None:
            return np.full(z.shape[0], np.inf), np.full(z.shape[0], -1)
        distances, indices = self._certified_tree.query(z, k=1)
        return distances[:, 0], self._certified_idx[indices[:, 0]]


def build_certificate(spec: RewardConstraintSpec, system: SystemSpec, policy: "PolicyHandle",
                      profile: SensitivityProfile, low: Sequence[float], high: Sequence[float],
                      spacing: float, reduction: Optional[ReductionMap] = None, method: str = "grid",
                      max_points: int = 1_000_000, batch_size: int = 4096, seed: int = 0,
                      show_progress: bool = False) -> GlobalCertificate:
    """
    Certify every nominal of a covering of the certification box.

    Args:
        spec: Reward/constraint spec with Lipschitz constants
        system: Closed-loop system
        policy: Policy being certified
        profile: Deviation profile for the same policy and eps_x
        low, high: Certification box (reduced coordinates)
        spacing: Covering spacing, at most 2 * eps_x
        reduction: Reduced-coordinate map (identity when omitted)
        method: "grid" or "sobol"
        max_points: Covering budget; exceeding it raises BudgetExceededError

    Returns:
        GlobalCertificate with values, boundary flags and spatial index
    """
    if spacing > 2.0 * profile.eps_x + 1e-12:
        raise ContractViolationError(f"Spacing {spacing} exceeds 2*eps_x = {2.0 * profile.eps_x}")
    low = np.asarray(low, dtype=np.float64)
    high = np.asarray(high, dtype=np.float64)
    if reduction is None:
        reduction = ReductionMap.identity(system.state_dim)
    if low.size != reduction.reduced_dim:
        raise ContractViolationError(f"Certification box has {low.size} axes, reduction has {reduction.reduced_dim}")

    points = covering_points(low, high, spacing, method=method, max_points=max_points, seed=seed)
    logger.info(f"Certifying {points.shape[0]} nominal points (spacing={spacing}, eps_x={profile.eps_x})")

    values = certify_states(spec, system, policy, profile, reduction.lift(points),
                            batch_size=batch_size, show_progress=show_progress)
    certified = values >= 0.0
    boundary = compute_boundary_flags(points, certified, spacing, low, high)
    logger.info(f"Certified {int(certified.sum())}/{points.shape[0]} nominals, {int(boundary.sum())} on the boundary")

    return GlobalCertificate(
        points=points,
        values=values,
        boundary=boundary,
        eps_x=profile.eps_x,
        spacing=spacing,
        gamma=spec.gamma,
        horizon=profile.horizon,
        policy_id=policy.policy_id,
        profile=profile,
        domain_low=low,
        domain_high=high,
        reduction=reduction,
    )


def member_mask(cert: GlobalCertificate, x: np.ndarray) -> np.ndarray:
    """Vectorised is_member over full states (B, n)."""
    z = cert.reduction.reduce(np.atleast_2d(x))
    distances, _ = cert.nearest_certified(z)
    return cert.in_domain(z) & (distances <= cert.eps_x)


def is_member(cert: GlobalCertificate, x: np.ndarray) -> bool:
    """True iff some certified nominal lies within eps_x of x (in reduced coordinates)."""
    return bool(member_mask(cert, np.asarray(x, dtype=np.float64)[None])[0])


def nearest_boundary_index(cert: GlobalCertificate, x: np.ndarray) -> int:
    """Index into cert.points of the closest boundary nominal; ties go to the lowest index."""
    if cert.boundary_count == 0:
        raise NoBoundaryPointsError("Certificate has no boundary points (trivially full or empty)")
    z = cert.reduction.reduce(np.asarray(x, dtype=np.float64))[None]
    distance, _ = cert._boundary_tree.query(z, k=1)
    radius = distance[0, 0] * (1.0 + 1e-12) + 1e-15
    candidates = cert._boundary_idx[cert._boundary_tree.query_radius(z, r=radius)[0]]
    exact = np.linalg.norm(cert.points[candidates] - z, axis=1)
    tied = candidates[exact == exact.min()]
    return int(tied.min())


def nearest_boundary(cert: GlobalCertificate, x: np.ndarray) -> np.ndarray:
    """Boundary nominal (reduced coordinates) closest to x."""
    return cert.points[nearest_boundary_index(cert, x)].copy()


def distance_to_certified(cert: GlobalCertificate, x: np.ndarray) -> np.ndarray:
    """Distance from full states (B, n) to the union of certified balls; 0 inside, inf if none."""
    z = cert.reduction.reduce(np.atleast_2d(x))
    distances, _ = cert.nearest_certified(z)
    return np.maximum(distances - cert.eps_x, 0.0)


def verify_certificate(cert: GlobalCertificate, spec: RewardConstraintSpec, system: SystemSpec,
                       policy: "PolicyHandle", atol: float = 0.0) -> int:
    """Recompute V_check for every stored nominal; returns the number of mismatching records."""
    if policy.policy_id != cert.policy_id:
        logger.warning(f"Verifying certificate for {cert.policy_id} with policy {policy.policy_id}")
    recomputed = certify_states(spec, system, policy, cert.profile, cert.reduction.lift(cert.points),
                                horizon=cert.horizon)
    mismatches = int(np.sum(np.abs(recomputed - cert.values) > atol))
    if mismatches:
        logger.warning(f"{mismatches} certificate records differ from recomputation")
    return mismatches
