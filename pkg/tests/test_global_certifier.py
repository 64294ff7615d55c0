import numpy as np
import pytest

from reachcert.core.errors import BudgetExceededError, ContractViolationError, NoBoundaryPointsError
from reachcert.core.global_certifier import (GlobalCertificate, build_certificate, certified_value, certify_point,
                                             compute_boundary_flags, covering_points, distance_to_certified,
                                             is_member, member_mask, nearest_boundary, nearest_boundary_index,
                                             verify_certificate)
from reachcert.core.reach_measure import band_reach_spec, rollout_values
from reachcert.core.scenario_engine import SensitivityProfile
from reachcert.core.systems import ReductionMap, rollout_batch


def manual_certificate(points, values, boundary, eps_x=0.5):
    points = np.asarray(points, dtype=np.float64)
    return GlobalCertificate(
        points=points,
        values=np.asarray(values, dtype=np.float64),
        boundary=np.asarray(boundary, dtype=bool),
        eps_x=eps_x,
        spacing=eps_x,
        gamma=0.99,
        horizon=1,
        policy_id="zero",
        profile=SensitivityProfile.zeros(1, eps_x),
        domain_low=points.min(axis=0) - 1.0,
        domain_high=points.max(axis=0) + 1.0,
        reduction=ReductionMap.identity(points.shape[1]),
    )


class TestCovering:

    def test_grid_is_centred(self):
        points = covering_points([0, 0], [1, 1], 0.3)
        axis = np.unique(np.round(points[:, 0], 12))
        np.testing.assert_allclose(axis, [0.05, 0.35, 0.65, 0.95])
        assert points.shape == (16, 2)

    def test_budget(self):
        with pytest.raises(BudgetExceededError):
            covering_points([0, 0], [1, 1], 0.1, max_points=10)

    def test_sobol_matches_grid_count_inside_box(self):
        grid = covering_points([0, -1], [1, 1], 0.25)
        sobol = covering_points([0, -1], [1, 1], 0.25, method="sobol", seed=3)
        assert sobol.shape == grid.shape
        assert np.all((sobol >= [0, -1]) & (sobol <= [1, 1]))

    def test_pinned_axis(self):
        points = covering_points([0, 0.5], [1, 0.5], 0.5)
        np.testing.assert_allclose(points[:, 1], 0.5)
        assert points.shape == (3, 2)

    def test_unknown_method(self):
        with pytest.raises(ContractViolationError):
            covering_points([0], [1], 0.5, method="lattice")


def test_boundary_flags_on_a_line():
    points = np.linspace(0.0, 1.0, 11)[:, None]
    certified = points[:, 0] < 0.55
    boundary = compute_boundary_flags(points, certified, 0.1, np.array([0.0]), np.array([1.0]))
    assert np.flatnonzero(boundary).tolist() == [0, 5]


def test_boundary_flags_empty_when_nothing_certified():
    points = np.linspace(0.0, 1.0, 5)[:, None]
    boundary = compute_boundary_flags(points, np.zeros(5, dtype=bool), 0.25, np.array([0.0]), np.array([1.0]))
    assert not boundary.any()


class TestCertifiedValue:

    def test_zero_profile_recovers_rollout_value(self, lowdim_pipeline):
        spec = lowdim_pipeline.reach_spec
        states, _ = rollout_batch(lowdim_pipeline.system, np.array([[0.3, 0.0], [1.1, 0.5]]), 8,
                                  policy=lowdim_pipeline.policy)
        np.testing.assert_allclose(certified_value(spec, states, SensitivityProfile.zeros(8)),
                                   rollout_values(spec, states))

    def test_larger_deviation_lowers_value(self, lowdim_pipeline):
        spec = lowdim_pipeline.reach_spec
        states, _ = rollout_batch(lowdim_pipeline.system, np.array([[0.3, 0.0]]), 8, policy=lowdim_pipeline.policy)
        small = SensitivityProfile(8, np.full(9, 0.01), 0.05, 1, 0)
        large = SensitivityProfile(8, np.full(9, 0.04), 0.05, 1, 0)
        assert certified_value(spec, states, large)[0] < certified_value(spec, states, small)[0]

    def test_componentwise_never_looser(self, lowdim_pipeline, lowdim_profile):
        band = lowdim_pipeline.band
        x0 = np.random.default_rng(0).uniform([0.2, -0.6], [1.2, 0.6], size=(200, 2))
        states, _ = rollout_batch(lowdim_pipeline.system, x0, 8, policy=lowdim_pipeline.policy)
        componentwise = certified_value(band_reach_spec(band, 0.99, True), states, lowdim_profile)
        scalar = certified_value(band_reach_spec(band, 0.99, False), states, lowdim_profile)
        assert np.all(componentwise >= scalar - 1e-12)

    def test_short_profile_rejected(self, lowdim_pipeline):
        with pytest.raises(ContractViolationError):
            certify_point(lowdim_pipeline.reach_spec, lowdim_pipeline.system, lowdim_pipeline.policy,
                          SensitivityProfile.zeros(4), np.array([0.3, 0.0]), horizon=8)


class TestLowdimCertificate:

    def test_flags_are_consistent(self, lowdim_certificate):
        cert = lowdim_certificate
        np.testing.assert_array_equal(cert.certified, cert.values >= 0)
        assert not np.any(cert.boundary & ~cert.certified)
        assert 0 < cert.certified_count < cert.points.shape[0]
        assert cert.boundary_count > 0

    def test_certified_nominals_are_members(self, lowdim_certificate):
        cert = lowdim_certificate
        x = cert.reduction.lift(cert.certified_points)
        assert member_mask(cert, x).all()
        assert distance_to_certified(cert, x).max() == 0.0

    def test_far_state_is_not_a_member(self, lowdim_certificate):
        assert not is_member(lowdim_certificate, np.array([3.0, 0.0]))
        assert distance_to_certified(lowdim_certificate, np.array([[3.0, 0.0]]))[0] > 1.0

    def test_target_centre_is_certified(self, lowdim_certificate):
        distances, index = lowdim_certificate.nearest_certified(np.array([[0.75, 0.0]]))
        assert index[0] >= 0
        assert distances[0] <= lowdim_certificate.spacing

    def test_verification_reproduces_values(self, lowdim_pipeline, lowdim_certificate):
        assert verify_certificate(lowdim_certificate, lowdim_pipeline.reach_spec, lowdim_pipeline.system,
                                  lowdim_pipeline.policy) == 0

    def test_tree_queries_match_linear_scan(self, lowdim_certificate):
        cert = lowdim_certificate
        rng = np.random.default_rng(11)
        queries = rng.uniform([-0.2, -1.0], [1.6, 1.0], size=(1000, 2))

        certified = cert.points[cert.certified]
        nearest = np.linalg.norm(queries[:, None, :] - certified[None], axis=2).min(axis=1)
        expected_members = cert.in_domain(queries) & (nearest <= cert.eps_x)
        np.testing.assert_array_equal(member_mask(cert, queries), expected_members)

        boundary_idx = np.flatnonzero(cert.boundary)
        to_boundary = np.linalg.norm(queries[:, None, :] - cert.points[boundary_idx][None], axis=2)
        expected_boundary = boundary_idx[np.argmin(to_boundary, axis=1)]
        found = np.array([nearest_boundary_index(cert, q) for q in queries])
        np.testing.assert_array_equal(found, expected_boundary)

    def test_certificate_records_policy_and_profile(self, lowdim_pipeline, lowdim_certificate, lowdim_profile):
        assert lowdim_certificate.policy_id == lowdim_pipeline.policy.policy_id
        assert lowdim_certificate.profile.digest() == lowdim_profile.digest()
        assert lowdim_certificate.horizon == 8


def test_spacing_above_twice_eps_rejected(lowdim_pipeline, lowdim_profile):
    with pytest.raises(ContractViolationError):
        build_certificate(lowdim_pipeline.reach_spec, lowdim_pipeline.system, lowdim_pipeline.policy,
                          lowdim_profile, [0.2, -0.6], [1.2, 0.6], spacing=0.2)


def test_nearest_boundary_tie_goes_to_lowest_index():
    cert = manual_certificate([[2.0], [0.0], [5.0]], [1.0, 1.0, 1.0], [True, True, False])
    assert nearest_boundary_index(cert, np.array([1.0])) == 0
    np.testing.assert_allclose(nearest_boundary(cert, np.array([0.2])), [0.0])


def test_nearest_boundary_without_boundary_points():
    cert = manual_certificate([[0.0], [1.0]], [1.0, -1.0], [False, False])
    with pytest.raises(NoBoundaryPointsError):
        nearest_boundary_index(cert, np.array([0.0]))


def test_empty_certified_set():
    cert = manual_certificate([[0.0], [1.0]], [-1.0, -0.5], [False, False])
    assert not is_member(cert, np.array([0.0]))
    assert np.isinf(distance_to_certified(cert, np.array([[0.0]]))[0])
    distances, indices = cert.nearest_certified(np.array([[0.0]]))
    assert np.isinf(distances[0]) and indices[0] == -1


def test_boundary_flag_on_uncertified_point_rejected():
    with pytest.raises(ContractViolationError):
        manual_certificate([[0.0]], [-1.0], [True])
