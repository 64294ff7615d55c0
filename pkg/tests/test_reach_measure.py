import numpy as np
import pytest

from conftest import racing_state
from reachcert.core.errors import ContractViolationError
from reachcert.core.reach_measure import (BandTargetSpec, RacingSpec, RewardConstraintSpec, band_reach_spec,
                                          downwash_margin, gate_aware_constraint, gate_wall_margins,
                                          lipschitz_estimate, ra_measure, ra_measure_series, racing_constraint,
                                          racing_lipschitz, racing_reach_spec, racing_reward,
                                          racing_reward_components, rollout_value, rollout_values)
from reachcert.core.systems import Trajectory


def test_measure_reaches_after_one_step():
    series = ra_measure_series(np.array([-1.0, 1.0]), np.array([1.0, 1.0]), gamma=0.5)
    np.testing.assert_allclose(series, [-1.0, 0.5])


def test_earlier_violation_dominates_later_reach():
    series = ra_measure_series(np.array([-1.0, 1.0]), np.array([-0.2, 1.0]), gamma=0.5)
    assert np.max(series) == pytest.approx(-0.2)


def test_positive_value_decreases_with_discount():
    rewards = np.array([-1.0, -0.5, 0.4, 0.4])
    constraints = np.ones(4)
    values = [np.max(ra_measure_series(rewards, constraints, g)) for g in (0.5, 0.9, 0.99)]
    assert 0 < values[0] < values[1] < values[2]


def test_ra_measure_on_trajectory_prefix():
    spec = band_reach_spec(BandTargetSpec(), gamma=0.9)
    states = np.array([[0.0, 0.0], [0.6, 0.1], [1.5, 0.0]])
    traj = Trajectory(states=states, controls=np.zeros((2, 1)), dt=0.1)
    # step 1 is inside the band; step 2 enters the obstacle
    assert ra_measure(spec, traj, 1) == pytest.approx(0.9 * 0.1)
    assert ra_measure(spec, traj, 2) < 0
    assert rollout_value(spec, traj) == pytest.approx(0.09)
    with pytest.raises(ContractViolationError):
        ra_measure(spec, traj, 3)


def test_rollout_values_accept_batches_and_gamma_override():
    spec = band_reach_spec(BandTargetSpec(), gamma=0.9)
    states = np.array([[[0.0, 0.0], [0.6, 0.1]], [[1.5, 0.0], [0.75, 0.0]]])
    values = rollout_values(spec, states)
    assert values.shape == (2,)
    assert values[0] > 0 and values[1] < 0
    assert rollout_values(spec, states, gamma=0.5)[0] == pytest.approx(0.05)


def test_spec_rejects_invalid_discount_and_constants():
    with pytest.raises(ContractViolationError):
        band_reach_spec(BandTargetSpec(), gamma=1.0)
    with pytest.raises(ContractViolationError):
        RewardConstraintSpec(lambda x: x, lambda x: x, [-1.0], [1.0], 0.9)


class TestRacingMargins:

    def test_reward_components_for_ego_ahead(self):
        x = racing_state(ego=(0.1, 0, -0.5, 1.0, 0.0, 0), opponent=(0.6, 0, -1.0, 0.4, 0, 0))
        np.testing.assert_allclose(racing_reward_components(x), [0.5, 0.6, 0.2, 0.3])
        assert racing_reward(x) == pytest.approx(0.2)

    def test_reward_negative_when_behind(self):
        x = racing_state(ego=(0, 0, -1.0, 1.0, 0, 0), opponent=(0.6, 0, -0.5, 0.4, 0, 0))
        assert racing_reward(x) < 0

    def test_downwash_grows_with_opponent_above(self):
        level = racing_state(opponent=(0.5, 0, 0, 0, 0, 0))
        above = racing_state(opponent=(0.5, 0, 0, 0, 0.5, 0))
        assert downwash_margin(level) == pytest.approx(0.05)
        assert downwash_margin(above) == pytest.approx(-0.05)

    def test_gate_walls_on_centreline(self):
        x = racing_state(ego=(0, 0, -1.0, 0, 0, 0), opponent=(1.0, 0, -3.0, 0, 0, 0))
        np.testing.assert_allclose(gate_wall_margins(x), [1.05] * 4)

    def test_downwash_margin_is_capped(self):
        x = racing_state(ego=(0, 0, -3.0, 0, 0, 0), opponent=(1.0, 0, 0.0, 0, 0, 0))
        assert racing_constraint(x) == pytest.approx(RacingSpec().downwash_cap)

    def test_gate_walls_inactive_past_gate_plane(self):
        x = racing_state(ego=(0.8, 0, 0.5, 1.0, 0, 0), opponent=(-1.0, 0, -1.0, 0, 0, 0))
        assert racing_constraint(x) < 0
        assert gate_aware_constraint(x) > 0

    def test_lipschitz_constants_bound_sampled_slopes(self):
        spec = RacingSpec()
        reward_l, constraint_l = racing_lipschitz(spec)
        low = np.tile([spec.position_low[0], -1.0, spec.position_low[1], -1.0, spec.position_low[2], -1.0], 2)
        high = np.tile([spec.position_high[0], 1.0, spec.position_high[1], 1.0, spec.position_high[2], 1.0], 2)
        assert lipschitz_estimate(lambda x: racing_reward(x, spec), low, high, 4000, seed=1) <= reward_l.max() + 1e-9
        assert lipschitz_estimate(lambda x: racing_constraint(x, spec), low, high, 4000, seed=2) <= constraint_l.max() + 1e-9

    def test_reach_spec_scalar_views(self):
        spec = racing_reach_spec(RacingSpec(), gamma=0.99)
        x = racing_state(ego=(0.1, 0, -0.5, 1.0, 0.0, 0), opponent=(0.6, 0, -1.0, 0.4, 0, 0))
        assert spec.reward(x) == pytest.approx(racing_reward(x))
        assert spec.constraint(x) == pytest.approx(racing_constraint(x))
        assert spec.L_r == pytest.approx(np.sqrt(2.0))

    def test_non_racing_state_rejected(self):
        with pytest.raises(ContractViolationError):
            racing_reward(np.zeros(6))


def test_band_margins():
    spec = band_reach_spec(BandTargetSpec(), gamma=0.99)
    x = np.array([0.75, 0.0])
    assert spec.reward(x) == pytest.approx(0.25)
    assert spec.constraint(x) == pytest.approx(0.55)
    assert spec.constraint(np.array([1.5, 0.0])) < 0


def test_lipschitz_estimate_of_linear_function():
    estimate = lipschitz_estimate(lambda x: 3.0 * x[:, 0], [0.0, 0.0], [1.0, 1.0], 500)
    assert estimate <= 3.0 + 1e-12
    assert estimate > 2.0
    with pytest.raises(ContractViolationError):
        lipschitz_estimate(lambda x: x[:, 0], [0.0], [0.0], 10)
