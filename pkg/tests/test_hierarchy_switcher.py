import numpy as np
import pytest

from conftest import empty_certificate, racing_state
from reachcert.core.controllers import MPPIConfig, PolicyHandle, band_cost
from reachcert.core.errors import CertificatePolicyMismatchError, ContractViolationError, MissingCertificateError
from reachcert.core.hierarchy_switcher import (OUTCOME_COLLISION, OUTCOME_LOST, OUTCOME_SUCCESS, OUTCOME_TIMEOUT,
                                               TIER_GLOBAL, TIER_LOCAL, TIER_RECOVERY, TIER_TARGET, EpisodeConfig,
                                               HierarchicalController, MPPIController, PlannerSpec,
                                               PolicyController, run_episode)
from reachcert.core.local_refiner import RefineConfig, local_member
from reachcert.core.reach_measure import RacingSpec, racing_reach_spec
from reachcert.core.systems import racing_system


def planners():
    fast = PlannerSpec(MPPIConfig(horizon=8, samples=32, cost="fast-goal"), band_cost("fast-goal"))
    recovery = PlannerSpec(MPPIConfig(horizon=8, samples=32, cost="recovery", warm_start="policy"),
                           band_cost("recovery"))
    return fast, recovery


def lowdim_controller(pipeline, certificate, refine=None, **kwargs):
    fast, recovery = planners()
    return HierarchicalController(pipeline.system, pipeline.policy, pipeline.reach_spec, certificate,
                                  refine or pipeline.refine_config(), fast, recovery, seed=0, **kwargs)


class TestTierSelection:

    def test_target_tier_inside_target(self, lowdim_pipeline, lowdim_certificate):
        decision = lowdim_controller(lowdim_pipeline, lowdim_certificate).decide(np.array([0.75, 0.0]))
        assert decision.tier == TIER_TARGET
        assert decision.diagnostics["reward"] > 0
        assert np.abs(decision.control[0]) <= 1.0

    def test_global_tier_runs_the_policy(self, lowdim_pipeline, lowdim_certificate):
        spec = lowdim_pipeline.reach_spec
        states = lowdim_certificate.reduction.lift(lowdim_certificate.certified_points)
        outside_target = states[spec.reward(states) <= 0.0]
        assert outside_target.shape[0] > 0
        x = outside_target[0]

        decision = lowdim_controller(lowdim_pipeline, lowdim_certificate).decide(x)
        assert decision.tier == TIER_GLOBAL
        np.testing.assert_allclose(decision.control, lowdim_pipeline.policy(x))
        assert decision.diagnostics["in_global"]

    def test_recovery_when_refinement_fails(self, lowdim_pipeline, lowdim_certificate):
        refine = RefineConfig(samples=159, max_radius=5.0, max_iterations=1, horizon=8)
        controller = lowdim_controller(lowdim_pipeline, lowdim_certificate, refine=refine)
        decision = controller.decide(np.array([0.1, -0.6]))
        assert decision.tier == TIER_RECOVERY
        assert decision.diagnostics["refinement_status"] == "exhausted"
        assert not decision.diagnostics["in_global"]
        assert "recovery_reentry" in decision.diagnostics
        assert len(controller.cache) == 0

    def test_outside_global_consults_local_refinement(self, lowdim_pipeline, lowdim_certificate):
        controller = lowdim_controller(lowdim_pipeline, lowdim_certificate)
        x = np.array([0.15, 0.0])
        decision = controller.decide(x)
        assert decision.tier in (TIER_LOCAL, TIER_RECOVERY)
        assert "refinement_status" in decision.diagnostics
        if decision.tier == TIER_LOCAL:
            assert local_member(decision.local_certificate, x, lowdim_pipeline.policy.policy_id)
            # a second visit is served from the cache
            again = controller.decide(x, t=1)
            assert again.tier == TIER_LOCAL
            assert again.diagnostics["refinement_status"] == "cached"

    def test_reset_clears_episode_state(self, lowdim_pipeline, lowdim_certificate):
        controller = lowdim_controller(lowdim_pipeline, lowdim_certificate)
        first = controller.decide(np.array([0.75, 0.0])).control
        controller.reset()
        np.testing.assert_array_equal(controller.decide(np.array([0.75, 0.0])).control, first)


def test_certificate_for_other_policy_rejected(lowdim_pipeline, lowdim_certificate):
    fast, recovery = planners()
    other = PolicyHandle(policy_id="other", fn=lambda x: np.zeros((x.shape[0], 1)))
    with pytest.raises(CertificatePolicyMismatchError):
        HierarchicalController(lowdim_pipeline.system, other, lowdim_pipeline.reach_spec, lowdim_certificate,
                               RefineConfig(), fast, recovery)


def test_empty_certificate_rejected(lowdim_pipeline):
    fast, recovery = planners()
    with pytest.raises(MissingCertificateError):
        HierarchicalController(lowdim_pipeline.system, lowdim_pipeline.policy, lowdim_pipeline.reach_spec,
                               empty_certificate(lowdim_pipeline.policy.policy_id), RefineConfig(), fast, recovery)


def test_controller_names(lowdim_pipeline, lowdim_certificate):
    fast, _ = planners()
    assert lowdim_controller(lowdim_pipeline, lowdim_certificate).name == "hybrid"
    assert lowdim_controller(lowdim_pipeline, lowdim_certificate, certified_planner=fast).name == \
        "hybrid-ablation-mppi"
    assert PolicyController(lowdim_pipeline.system, lowdim_pipeline.policy).name == "policy-only"


def test_policy_warm_start_needs_policy(lowdim_pipeline):
    planner = PlannerSpec(MPPIConfig(warm_start="policy", cost="plain-goal"), band_cost("plain-goal"))
    with pytest.raises(ContractViolationError):
        MPPIController(lowdim_pipeline.system, planner)


class TestEpisodes:
    """Racing episodes with a static opponent-free system and a hovering ego."""

    @pytest.fixture
    def hover(self):
        system = racing_system(None)
        policy = PolicyHandle(policy_id="hover", fn=lambda x: np.zeros((x.shape[0], 6)))
        return system, PolicyController(system, policy), racing_reach_spec(RacingSpec(), gamma=0.99)

    def test_collision_at_start(self, hover):
        system, controller, spec = hover
        log = run_episode(controller, system, spec, racing_state(ego=(0, 0, -2.0, 0, 0, 0),
                                                                 opponent=(0, 0, -2.0, 0, 0, 0)))
        assert log.outcome == OUTCOME_COLLISION
        assert log.steps == 0 and log.decisions == []

    def test_opponent_crossing_first_is_lost(self, hover):
        system, controller, spec = hover
        x0 = racing_state(ego=(0, 0, -2.0, 0, 0, 0), opponent=(1.0, 0, -0.05, 1.0, 0, 0))
        log = run_episode(controller, system, spec, x0)
        assert log.outcome == OUTCOME_LOST
        assert log.steps == 1

    def test_ego_crossing_inside_corridor_is_success(self, hover):
        system, controller, spec = hover
        x0 = racing_state(ego=(0, 0, -0.05, 1.0, 0, 0), opponent=(1.0, 0, -2.0, 0, 0, 0))
        log = run_episode(controller, system, spec, x0)
        assert log.outcome == OUTCOME_SUCCESS
        assert log.states[-1][2] >= 0.0

    def test_timeout(self, hover):
        system, controller, spec = hover
        x0 = racing_state(ego=(0, 0, -3.0, 0, 0, 0), opponent=(1.0, 0, -2.0, 0, 0, 0))
        log = run_episode(controller, system, spec, x0, EpisodeConfig(max_steps=5))
        assert log.outcome == OUTCOME_TIMEOUT
        assert log.steps == 5 and len(log.states) == 6
        assert log.tier_histogram() == {"none": 5}

        rows = log.rows()
        assert len(rows) == 5
        assert rows[0]["tier"] == -1 and rows[0]["x2"] == -3.0
        assert {"reward", "constraint", "u0", "x11"} <= set(rows[0])

    def test_needs_a_step(self, hover):
        system, controller, spec = hover
        with pytest.raises(ContractViolationError):
            run_episode(controller, system, spec, np.zeros(12), EpisodeConfig(max_steps=0))
