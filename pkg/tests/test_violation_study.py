import numpy as np
import pytest

from conftest import half_plane_spec
from reachcert.core.errors import ContractViolationError
from reachcert.core.local_refiner import LocalCertificate
from reachcert.core.scenario_engine import bound_deviation, sample_pairs
from reachcert.core.systems import ReductionMap
from reachcert.runs.guarantee_study import run_guarantee_study
from reachcert.validation.oracle import OracleTable, brute_force_value, build_oracle_table
from reachcert.validation.violation_study import (clopper_pearson_interval, clopper_pearson_upper,
                                                  deviation_calibration, global_violation_study,
                                                  ground_truth_values, local_violation_study,
                                                  repeated_calibration, risk_report)


def test_clopper_pearson_upper_without_failures():
    assert clopper_pearson_upper(0, 100) == pytest.approx(1.0 - 0.05 ** (1 / 100))
    assert clopper_pearson_upper(0, 0) == 1.0
    assert clopper_pearson_upper(7, 7) == 1.0
    assert clopper_pearson_upper(3, 100) > 0.03


def test_clopper_pearson_interval():
    low, high = clopper_pearson_interval(5, 10)
    assert low < 0.5 < high
    assert clopper_pearson_interval(0, 10)[0] == 0.0
    assert clopper_pearson_interval(10, 10)[1] == 1.0


def test_risk_report():
    assert risk_report(100, 0, 0, 0.1).vacuous
    clean = risk_report(500, 100, 0, 0.1)
    assert clean.passed and clean.estimate == 0.0
    noisy = risk_report(500, 100, 20, 0.1)
    assert not noisy.passed and noisy.estimate == pytest.approx(0.2)
    assert set(noisy.as_row()) >= {"members", "violations", "upper_bound", "passed"}


class TestGlobalStudy:

    def test_certified_states_rarely_fail(self, lowdim_pipeline, lowdim_certificate):
        oracle = build_oracle_table(lowdim_pipeline.system, lowdim_pipeline.reach_spec, [0.2, -0.6], [1.2, 0.6],
                                    [3, 3], horizon=4)
        report = global_violation_study(lowdim_certificate, oracle, lowdim_pipeline.system, lowdim_pipeline.policy,
                                        lowdim_pipeline.reach_spec, samples=300, seed=1)
        assert report.samples == 300
        assert 0 < report.members <= 300
        assert report.estimate <= 0.1

    def test_oracle_must_cover_domain(self, lowdim_pipeline, lowdim_certificate):
        oracle = build_oracle_table(lowdim_pipeline.system, lowdim_pipeline.reach_spec, [0.5, -0.6], [1.2, 0.6],
                                    [2, 2], horizon=2)
        with pytest.raises(ContractViolationError):
            global_violation_study(lowdim_certificate, oracle, lowdim_pipeline.system, lowdim_pipeline.policy,
                                   lowdim_pipeline.reach_spec, samples=10)


class TestLocalStudy:

    @staticmethod
    def ball(radius):
        return LocalCertificate(center=np.zeros(2), radius=radius, policy_id="zero", iterations=1, boundary_index=0,
                                reduction=ReductionMap.identity(2), reference=np.zeros(2), seed=0)

    def test_safe_ball(self, static_system, zero_policy):
        report = local_violation_study(self.ball(0.2), static_system, zero_policy, half_plane_spec(), 1000, 1)
        assert report.violations == 0 and report.passed

    def test_ball_reaching_the_unsafe_side(self, static_system, zero_policy):
        report = local_violation_study(self.ball(0.5), static_system, zero_policy, half_plane_spec(), 4000, 1,
                                       seed=3)
        # the cap beyond x_0 = 0.3 holds about 14% of the disk
        assert report.estimate == pytest.approx(0.142, abs=0.03)
        assert not report.passed


class TestCalibration:

    def test_own_pairs_never_exceed(self, lowdim_pipeline):
        pairs = sample_pairs([0.2, -0.6], [1.2, 0.6], 0.05, 159, seed=0)
        profile = bound_deviation(lowdim_pipeline.system, lowdim_pipeline.policy, pairs, 8)
        report = deviation_calibration(lowdim_pipeline.system, lowdim_pipeline.policy, profile, pairs)
        assert report.worst == 0.0 and report.passed

    def test_fresh_pairs_within_risk_level(self, lowdim_pipeline):
        reports = repeated_calibration(lowdim_pipeline.system, lowdim_pipeline.policy, [0.2, -0.6], [1.2, 0.6],
                                       eps_x=0.05, horizon=8, pairs=159, fresh=2000, repetitions=3, seed=0)
        assert len(reports) == 3
        assert all(r.exceedance.shape == (9,) for r in reports)
        assert all(r.passed for r in reports)

    @pytest.mark.slow
    def test_full_scale_calibration(self, lowdim_pipeline):
        o = lowdim_pipeline.config.oracle
        reports = repeated_calibration(lowdim_pipeline.system, lowdim_pipeline.policy, [0.2, -0.6], [1.2, 0.6],
                                       eps_x=0.05, horizon=8, pairs=lowdim_pipeline.plan_samples(),
                                       fresh=o.fresh_samples, repetitions=o.calibration_repetitions, seed=0)
        assert len(reports) == 200
        assert sum(r.passed for r in reports) >= 198


def test_ground_truth_uses_exact_oracle_off_grid(lowdim_pipeline, lowdim_certificate, monkeypatch):
    p = lowdim_pipeline
    oracle = build_oracle_table(p.system, p.reach_spec, [0.0, -1.5], [2.0, 1.5], [3, 3], horizon=4)
    states = np.random.default_rng(9).uniform([0.2, -0.6], [1.2, 0.6], size=(40, 2))

    def no_interpolation(self, x):
        raise AssertionError("ground truth must not interpolate the oracle grid")

    monkeypatch.setattr(OracleTable, "interpolate", no_interpolation)
    truth = ground_truth_values(lowdim_certificate, oracle, p.system, p.policy, p.reach_spec, states)
    exact = oracle.exact(states)
    assert np.all(truth >= exact)
    for x, value in zip(states[:5], exact[:5]):
        assert value == pytest.approx(brute_force_value(p.system, p.reach_spec, x, 4, oracle.controls), rel=1e-12)


@pytest.mark.slow
def test_full_scale_guarantee_study(lowdim_pipeline, tmp_path):
    rows = run_guarantee_study(lowdim_pipeline, tmp_path / "violation.csv")
    global_rows = [r for r in rows if r["study"] == "global"]
    calibration_rows = [r for r in rows if r["study"] == "calibration"]
    assert len(global_rows) == 200
    assert all(r["members"] > 0 for r in global_rows)
    assert sum(bool(r["passed"]) for r in global_rows) >= 199
    assert sum(bool(r["passed"]) for r in calibration_rows) >= 198
    assert (tmp_path / "violation.csv").exists()
