"""
Online local safe-set growth around the global certificate's boundary.

Starting from the largest admissible radius, a ball around the boundary nominal
closest to the current state is sampled; every violating rollout shrinks the ball
to just exclude the closest violation, and the ball is returned once a fresh batch
of samples is violation-free.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .controllers import PolicyHandle
from .errors import CertificatePolicyMismatchError, ContractViolationError
from .global_certifier import GlobalCertificate, nearest_boundary_index
from .reach_measure import RewardConstraintSpec, rollout_values
from .scenario_engine import sample_ball
from .systems import ReductionMap, SystemSpec, rollout_batch

logger = logging.getLogger(__name__)

STATUS_CERTIFIED = "certified"
STATUS_COLLAPSED = "collapsed"
STATUS_EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class RefineConfig:
    """Inputs of the shrink-and-resample loop."""
    samples: int = 159            # N per iteration
    max_radius: float = 0.5       # r_max
    max_iterations: int = 10      # M
    horizon: int = 20             # T
    gamma: float = 0.99
    seed: int = 0
    min_radius: float = 1e-3      # r_min; below it refinement collapses

    def __post_init__(self):
        if self.samples < 1 or self.max_iterations < 1 or self.horizon < 1:
            raise ContractViolationError("Refinement needs samples, max_iterations and horizon >= 1")
        if not self.max_radius > 0:
            raise ContractViolationError(f"max_radius must be positive, got {self.max_radius}")
        if not 0 <= self.min_radius < self.max_radius:
            raise ContractViolationError("min_radius must lie in [0, max_radius)")
        if not 0.0 < self.gamma < 1.0:
            raise ContractViolationError(f"gamma must lie in (0, 1), got {self.gamma}")


@dataclass(frozen=True, eq=False)
class LocalCertificate:
    """Closed ball B_r(center) in the certificate's reduced coordinates, bound to one policy."""
    center: np.ndarray
    radius: float
    policy_id: str
    iterations: int
    boundary_index: int
    reduction: ReductionMap
    reference: np.ndarray          # full state the samples were lifted around
    seed: int
    created_step: int = 0
    created_at: float = field(default_factory=time.time)

    def __post_init__(self):
        if not self.radius > 0:
            raise ContractViolationError(f"Local certificate radius must be positive, got {self.radius}")


@dataclass(frozen=True, eq=False)
class RefinementResult:
    """Outcome of one refinement call with the per-iteration history."""
    status: str
    certificate: Optional[LocalCertificate]
    center: np.ndarray
    radii: Tuple[float, ...]
    violations: Tuple[int, ...]

    @property
    def succeeded(self) -> bool:
        return self.status == STATUS_CERTIFIED

    @property
    def iterations(self) -> int:
        return len(self.radii)

    def history(self) -> List[Dict[str, float]]:
        return [{"iteration": i, "radius": r, "violations": v}
                for i, (r, v) in enumerate(zip(self.radii, self.violations))]


def iterative_growth(cfg: RefineConfig, system: SystemSpec, policy: PolicyHandle, spec: RewardConstraintSpec,
                     cert: GlobalCertificate, x_t: np.ndarray, step: int = 0) -> RefinementResult:
    """
    Grow a local certificate around the boundary nominal nearest to x_t.

    Args:
        cfg: Refinement parameters
        system: Closed-loop system
        policy: Policy the global certificate was built for
        spec: Reward/constraint spec (its discount is replaced by cfg.gamma)
        cert: Global certificate providing boundary points and reduction map
        x_t: Current full state; non-reduced coordinates of the samples are taken from it
        step: Episode step, recorded on the certificate

    Returns:
        RefinementResult; status is certified, collapsed (r < r_min) or exhausted (M iterations)
    """
    if policy.policy_id != cert.policy_id:
        raise CertificatePolicyMismatchError(
            f"Certificate was built for '{cert.policy_id}', refinement requested for '{policy.policy_id}'")

    x_t = np.asarray(x_t, dtype=np.float64)
    index = nearest_boundary_index(cert, x_t)
    center = cert.points[index].copy()
    rng = np.random.default_rng(cfg.seed)

    radius = cfg.max_radius
    radii: List[float] = []
    violations: List[int] = []

    for iteration in range(cfg.max_iterations):
        offsets = sample_ball(rng, cfg.samples, center.size, radius)
        initial = cert.reduction.lift(center + offsets, reference=x_t)
        states, _ = rollout_batch(system, initial, cfg.horizon, policy=policy)
        values = rollout_values(spec, states, gamma=cfg.gamma)

        failed = values <= 0.0
        radii.append(radius)
        violations.append(int(np.sum(failed)))
        logger.debug(f"Refinement iteration {iteration}: r={radius:.5f}, violations={violations[-1]}")

        if not np.any(failed):
            certificate = LocalCertificate(
                center=center,
                radius=radius,
                policy_id=policy.policy_id,
                iterations=iteration + 1,
                boundary_index=index,
                reduction=cert.reduction,
                reference=x_t.copy(),
                seed=cfg.seed,
                created_step=step,
            )
            return RefinementResult(STATUS_CERTIFIED, certificate, center, tuple(radii), tuple(violations))

        closest = float(np.min(np.linalg.norm(offsets[failed], axis=1)))
        radius = float(np.nextafter(min(closest, radius), 0.0))
        if radius < cfg.min_radius or radius <= 0.0:
            logger.debug(f"Refinement collapsed at r={radius:.3e}")
            return RefinementResult(STATUS_COLLAPSED, None, center, tuple(radii), tuple(violations))

    logger.debug(f"Refinement exhausted {cfg.max_iterations} iterations")
    return RefinementResult(STATUS_EXHAUSTED, None, center, tuple(radii), tuple(violations))


def local_member(lc: LocalCertificate, x: np.ndarray, policy_id: Optional[str] = None) -> bool:
    """True iff ||R x - center|| <= r* (closed ball); policy_id, when given, must match."""
    if policy_id is not None and policy_id != lc.policy_id:
        raise CertificatePolicyMismatchError(
            f"Local certificate belongs to '{lc.policy_id}', consulted for '{policy_id}'")
    z = lc.reduction.reduce(np.asarray(x, dtype=np.float64))
    return bool(np.linalg.norm(z - lc.center) <= lc.radius)


class LocalCertificateCache:
    """
    Local certificates of one episode, keyed by boundary point.

    An entry stays valid while the coordinates the reduction does not see remain
    within eps_x of their value when the entry was refined.
    """

    def __init__(self, eps_x: float):
        self.eps_x = eps_x
        self._entries: Dict[int, LocalCertificate] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, boundary_index: int) -> bool:
        return boundary_index in self._entries

    @property
    def certificates(self) -> Tuple[LocalCertificate, ...]:
        return tuple(self._entries.values())

    def store(self, lc: LocalCertificate) -> None:
        self._entries[lc.boundary_index] = lc

    def invalidate(self, x: np.ndarray) -> int:
        """Drop entries whose unreduced coordinates drifted beyond eps_x; returns how many."""
        stale = [key for key, lc in self._entries.items()
                 if float(lc.reduction.drift(x, lc.reference)) > self.eps_x]
        for key in stale:
            del self._entries[key]
        if stale:
            logger.debug(f"Invalidated {len(stale)} local certificates")
        return len(stale)

    def lookup(self, x: np.ndarray, policy_id: str) -> Optional[LocalCertificate]:
        """First cached certificate containing x."""
        for lc in self._entries.values():
            if local_member(lc, x, policy_id):
                return lc
        return None

    def clear(self) -> None:
        self._entries.clear()
