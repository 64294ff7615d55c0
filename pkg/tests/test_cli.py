import pandas as pd
import pytest

from reachcert.cli import main
from reachcert.utils.results_io import load_certificate, load_profile, read_csv


def test_plan_samples(config_dir, capsys):
    assert main(["plan-samples", "--config", str(config_dir / "oracle.yaml")]) == 0
    assert "N = 159" in capsys.readouterr().out


def test_certify_then_refine(config_dir, tmp_path):
    config = str(config_dir / "oracle.yaml")
    certificate = tmp_path / "certificate.json"
    records = tmp_path / "certificate.csv"
    assert main(["certify", "--config", config, "--output", str(certificate), "--csv", str(records)]) == 0
    assert load_certificate(certificate).horizon == 8
    assert {"p", "v", "value", "certified", "boundary"} <= set(pd.read_csv(records).columns)

    history = tmp_path / "refinement.csv"
    assert main(["refine", "--config", config, "--certificate", str(certificate), "--state", "0.15", "0.0",
                 "--output", str(history)]) == 0
    frame = pd.read_csv(history)
    assert list(frame.columns) == ["iteration", "radius", "violations"]
    assert len(frame) >= 1


def test_refine_needs_certificate(config_dir):
    assert main(["refine", "--config", str(config_dir / "oracle.yaml")]) == 1


def test_bad_config_exits_nonzero(tmp_path):
    assert main(["plan-samples", "--config", str(tmp_path / "absent.yaml")]) == 1


def test_lowdim_pipeline_writes_artifacts(config_dir, tmp_path):
    assert main(["pipeline", "--config", str(config_dir / "oracle.yaml"), "--output-dir", str(tmp_path)]) == 0
    for name in ("profile.json", "certificate.json", "certificate.csv"):
        assert (tmp_path / name).exists()


@pytest.mark.slow
def test_guarantee_study_rows(config_dir, tmp_path):
    output = tmp_path / "guarantees.csv"
    assert main(["violation", "--config", str(config_dir / "oracle.yaml"), "--output", str(output),
                 "--repetitions", "1"]) == 0
    studies = set(pd.read_csv(output)["study"])
    assert {"calibration", "global"} <= studies


def test_bound_dynamics_writes_profile_with_metadata(config_dir, tmp_path):
    output = tmp_path / "profile.json"
    assert main(["bound-dynamics", "--config", str(config_dir / "oracle.yaml"), "--output", str(output)]) == 0
    profile = load_profile(output)
    assert profile.epsilon == pytest.approx(0.1) and profile.beta == pytest.approx(0.001)

    table = output.with_suffix(".csv")
    header = [line for line in table.read_text().splitlines() if line.startswith("#")]
    assert header == ["# seed=0", "# samples=159", "# epsilon=0.1", "# beta=0.001", "# eps_x=0.05", "# horizon=8"]
    frame = read_csv(table)
    assert list(frame.columns) == ["t", "bound"]
    assert list(frame["t"]) == list(range(9))
    assert frame["bound"].tolist() == profile.bounds.tolist()
