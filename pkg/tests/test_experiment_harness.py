import numpy as np
import pytest

from conftest import empty_certificate
from reachcert.core.errors import ConfigError, ContractViolationError, MissingCertificateError
from reachcert.core.global_certifier import is_member
from reachcert.core.hierarchy_switcher import TIER_GLOBAL, TIER_LOCAL, TIER_RECOVERY, TIER_TARGET, EpisodeConfig
from reachcert.core.local_refiner import local_member
from reachcert.runs.experiment_harness import (BASELINES, METHODS, ExperimentConfig, SuccessTable, build_controller,
                                               compare_methods, run_study, run_trial, run_trials,
                                               sample_initial_conditions, wilson_interval)


def test_wilson_interval_at_one_half():
    low, high = wilson_interval(50, 100)
    assert low == pytest.approx(0.4038, abs=1e-4)
    assert high == pytest.approx(0.5962, abs=1e-4)


def test_wilson_interval_edges():
    assert wilson_interval(0, 0) == (0.0, 1.0)
    low, high = wilson_interval(0, 20)
    assert low == pytest.approx(0.0, abs=1e-12) and 0.0 < high < 0.2
    low, high = wilson_interval(20, 20)
    assert high == pytest.approx(1.0, abs=1e-12) and 0.8 < low < 1.0


class TestSuccessTable:

    def test_counts_must_sum_to_trials(self):
        with pytest.raises(ContractViolationError):
            SuccessTable("hybrid", 10, 5, 1, 1, 1)

    def test_from_outcomes(self):
        table = SuccessTable.from_outcomes("hybrid", ["success", "success", "lost", "collision", "timeout"])
        assert (table.trials, table.success_count, table.lost_count) == (5, 2, 1)
        row = table.as_row()
        assert row["success_fraction"] == pytest.approx(0.4)
        assert row["ci_low"] < 0.4 < row["ci_high"]


@pytest.mark.parametrize("kwargs", [
    dict(method="teleport"),
    dict(trials=0),
    dict(max_steps=0),
    dict(initial_low=(1.0, 0.0), initial_high=(0.0, 1.0)),
    dict(initial_low=(0.0,), initial_high=(0.0, 1.0)),
])
def test_experiment_config_validation(kwargs):
    params = dict(method="policy-only", initial_low=(0.0, 0.0), initial_high=(1.0, 1.0))
    params.update(kwargs)
    with pytest.raises(ConfigError):
        ExperimentConfig(**params)


def test_compare_methods():
    tables = [SuccessTable("hybrid", 100, 90, 5, 5, 0), SuccessTable("policy-only", 100, 40, 60, 0, 0),
              SuccessTable("mppi-soft", 100, 88, 12, 0, 0)]
    rows = {row["method"]: row for row in compare_methods(tables)}
    assert set(rows) == {"policy-only", "mppi-soft"}
    assert rows["policy-only"]["reference_dominates"] and rows["policy-only"]["intervals_separated"]
    assert rows["mppi-soft"]["reference_dominates"] and not rows["mppi-soft"]["intervals_separated"]
    with pytest.raises(KeyError):
        compare_methods(tables[1:])


def test_initial_conditions_are_seeded_and_in_box():
    cfg = ExperimentConfig("policy-only", (0.0, -1.0), (1.0, 1.0), trials=50, seed=4)
    states, seeds = sample_initial_conditions(cfg)
    again, seeds_again = sample_initial_conditions(cfg)
    np.testing.assert_array_equal(states, again)
    np.testing.assert_array_equal(seeds, seeds_again)
    assert states.shape == (50, 2)
    assert np.all((states >= [0.0, -1.0]) & (states <= [1.0, 1.0]))


def assert_tiers_replay(log, context):
    """Each logged tier fired only because every higher-priority tier was false."""
    certificate, policy_id = context.certificate, context.policy.policy_id
    for x, decision in zip(log.states, log.decisions):
        assert np.max(np.abs(decision.control)) <= context.system.control_bound + 1e-12
        reward = float(context.reach_spec.reward(x))
        if decision.tier == TIER_TARGET:
            assert reward > 0.0
            continue
        assert reward <= 0.0
        if decision.tier == TIER_GLOBAL:
            assert is_member(certificate, x)
            continue
        assert not is_member(certificate, x)
        if decision.tier == TIER_LOCAL:
            local = decision.local_certificate
            assert local is not None and local.policy_id == policy_id
            assert local_member(local, x, policy_id)
        else:
            assert decision.tier == TIER_RECOVERY
            assert decision.local_certificate is None
            assert not decision.diagnostics["in_local"]


class TestRacingStudy:

    def test_every_method_builds(self, racing_pipeline, racing_certificate):
        context = racing_pipeline.racing_context(racing_certificate)
        for method in METHODS:
            assert build_controller(context, method).name == method

    def test_certified_methods_need_certificate(self, racing_pipeline):
        context = racing_pipeline.racing_context(None)
        with pytest.raises(MissingCertificateError):
            build_controller(context, "hybrid")
        with pytest.raises(MissingCertificateError):
            run_trials(racing_pipeline.experiment_config("hybrid-ablation-mppi", trials=1), context)

        empty = racing_pipeline.racing_context(empty_certificate(racing_pipeline.policy.policy_id, dim=8))
        with pytest.raises(MissingCertificateError):
            build_controller(empty, "hybrid")
        assert build_controller(empty, "policy-only").name == "policy-only"

    def test_policy_only_study(self, racing_pipeline):
        context = racing_pipeline.racing_context(None)
        table = run_study(racing_pipeline.experiment_config("policy-only", trials=4), context)
        assert table.method == "policy-only" and table.trials == 4

    def test_episodes_are_reproducible(self, racing_pipeline):
        context = racing_pipeline.racing_context(None)
        cfg = racing_pipeline.experiment_config("mppi-plain", trials=2)
        first = [log.outcome for log in run_trials(cfg, context)]
        second = [log.outcome for log in run_trials(cfg, context)]
        assert first == second

    def test_tier_decisions_replay(self, racing_pipeline, racing_certificate):
        context = racing_pipeline.racing_context(racing_certificate)
        states, seeds = sample_initial_conditions(racing_pipeline.experiment_config("hybrid", trials=2))
        for x0, seed in zip(states, seeds):
            log = run_trial(context, "hybrid", x0, seed, EpisodeConfig(max_steps=15))
            assert len(log.decisions) == log.steps
            assert_tiers_replay(log, context)

    @pytest.mark.slow
    def test_tier_decisions_replay_over_full_episodes(self, racing_pipeline, racing_certificate):
        context = racing_pipeline.racing_context(racing_certificate)
        logs = run_trials(racing_pipeline.experiment_config("hybrid", trials=100), context)
        assert len(logs) == 100
        for log in logs:
            assert_tiers_replay(log, context)

    @pytest.mark.slow
    def test_hybrid_dominates_every_baseline(self, racing_pipeline, racing_certificate):
        context = racing_pipeline.racing_context(racing_certificate)
        tables = [run_study(racing_pipeline.experiment_config(method, trials=500), context) for method in METHODS]
        rows = {row["method"]: row for row in compare_methods(tables)}
        assert set(rows) == set(BASELINES)
        assert all(row["reference_dominates"] for row in rows.values())
        assert rows["mppi-plain"]["intervals_separated"]
        assert rows["policy-only"]["intervals_separated"]

    @pytest.mark.slow
    def test_hybrid_study(self, racing_pipeline, racing_certificate):
        context = racing_pipeline.racing_context(racing_certificate)
        table = run_study(racing_pipeline.experiment_config("hybrid", trials=3), context)
        assert table.trials == 3
