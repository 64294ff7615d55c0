"""
Shared fixtures: the low-dimensional benchmark (cheap, oracle-checkable) and
the racing benchmark built from the development configuration.
"""

from pathlib import Path

import numpy as np
import pytest

from reachcert.core.controllers import PolicyHandle
from reachcert.core.global_certifier import GlobalCertificate
from reachcert.core.reach_measure import RewardConstraintSpec
from reachcert.core.scenario_engine import SensitivityProfile
from reachcert.core.systems import ReductionMap, linear_system
from reachcert.pipeline import VerificationPipeline
from reachcert.utils.config import load_config

CONFIG_DIR = Path(__file__).resolve().parents[1] / "config"


@pytest.fixture(scope="session")
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture(scope="session")
def lowdim_pipeline() -> VerificationPipeline:
    return VerificationPipeline(load_config(CONFIG_DIR / "oracle.yaml"))


@pytest.fixture(scope="session")
def lowdim_profile(lowdim_pipeline):
    return lowdim_pipeline.bound_dynamics()


@pytest.fixture(scope="session")
def lowdim_certificate(lowdim_pipeline, lowdim_profile):
    return lowdim_pipeline.certify(lowdim_profile)


@pytest.fixture(scope="session")
def racing_pipeline() -> VerificationPipeline:
    return VerificationPipeline(load_config(CONFIG_DIR / "development.yaml"))


@pytest.fixture(scope="session")
def racing_certificate(racing_pipeline):
    certificate = racing_pipeline.certify(racing_pipeline.bound_dynamics())
    assert certificate.certified_count > 0
    assert certificate.boundary_count > 0
    return certificate


@pytest.fixture
def zero_policy():
    return PolicyHandle(policy_id="zero", fn=lambda x: np.zeros((x.shape[0], 1)))


@pytest.fixture
def static_system():
    """x_{t+1} = x_t in 2D; controls have no effect."""
    return linear_system(np.eye(2), np.zeros((2, 1)))


def half_plane_spec(offset: float = 0.3, gamma: float = 0.99) -> RewardConstraintSpec:
    """Reward always 1, constraint violated on x_0 >= offset."""
    return RewardConstraintSpec(
        reward_fn=lambda x: np.ones(np.shape(x)[:-1] + (1,)),
        constraint_fn=lambda x: (offset - np.asarray(x)[..., 0])[..., None],
        reward_lipschitz=[0.0],
        constraint_lipschitz=[1.0],
        gamma=gamma,
        name="half-plane",
    )


def racing_state(ego=(0.0, 0.0, 0.0, 0.0, 0.0, 0.0), opponent=(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)) -> np.ndarray:
    """Joint state from per-drone [px, vx, py, vy, pz, vz] blocks."""
    return np.concatenate([np.asarray(ego, dtype=np.float64), np.asarray(opponent, dtype=np.float64)])


def empty_certificate(policy_id: str = "zero", dim: int = 2) -> GlobalCertificate:
    """A certificate whose only nominal failed certification."""
    return GlobalCertificate(
        points=np.zeros((1, dim)),
        values=np.array([-1.0]),
        boundary=np.array([False]),
        eps_x=0.05,
        spacing=0.1,
        gamma=0.99,
        horizon=1,
        policy_id=policy_id,
        profile=SensitivityProfile.zeros(1, 0.05),
        domain_low=-np.ones(dim),
        domain_high=np.ones(dim),
        reduction=ReductionMap.identity(dim),
    )
