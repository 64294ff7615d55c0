#!/usr/bin/env python3
"""
Guarantee study on the low-dimensional benchmark.

Repeats the offline pipeline with fresh scenario seeds and measures, against
the brute-force oracle, how often certified states actually fail:

1. deviation-bound calibration (per-step exceedance of dx*_t)
2. global certificate violation rate with a Clopper-Pearson upper bound
3. local certificate violation rate at one boundary point per repetition

    python -m reachcert.runs.guarantee_study config/oracle.yaml results/guarantees.csv
"""

import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from ..core.errors import ReachCertError
from ..pipeline import VerificationPipeline
from ..utils.config import load_config, setup_logging
from ..utils.results_io import emit_csv
from ..validation.violation_study import repeated_calibration

logger = logging.getLogger(__name__)


def run_guarantee_study(pipeline: VerificationPipeline, output_path: Path,
                        repetitions: Optional[int] = None) -> List[Dict[str, object]]:
    """
    Run calibration, global and local studies and write one CSV row per study.

    Args:
        pipeline: Pipeline built from a low-dimensional configuration
        output_path: CSV file for the study rows
        repetitions: Overrides both repetition counts of the oracle section

    Returns:
        The study rows
    """
    base = pipeline.config
    o, c, s = base.oracle, base.certificate, base.scenario
    rows: List[Dict[str, object]] = []

    print("\nSTEP 1: Deviation-bound calibration...")
    start_time = time.time()
    calibrations = repeated_calibration(
        pipeline.system, pipeline.policy, c.domain_low, c.domain_high, s.eps_x, s.horizon,
        pipeline.plan_samples(), o.fresh_samples, repetitions or o.calibration_repetitions,
        seed=s.seed, epsilon=s.epsilon,
    )
    for rep, report in enumerate(calibrations):
        rows.append({"study": "calibration", "repetition": rep, "worst_exceedance": report.worst,
                     "epsilon": report.epsilon, "passed": report.passed})
    passed = sum(r.passed for r in calibrations)
    print(f"{passed}/{len(calibrations)} profiles within epsilon at every step "
          f"(took {time.time() - start_time:.1f}s)")

    print("\nSTEP 2: Building oracle table...")
    start_time = time.time()
    oracle = pipeline.build_oracle(show_progress=True)
    print(f"Oracle over {oracle.values.size} nodes (took {time.time() - start_time:.1f}s)")

    print("\nSTEP 3: Global and local violation studies...")
    start_time = time.time()
    try:
        for rep in range(repetitions or o.repetitions):
            pipeline.config = base.model_copy(update={"scenario": s.model_copy(update={"seed": s.seed + rep})})
            certificate = pipeline.certify(pipeline.bound_dynamics())
            report = pipeline.global_study(certificate, oracle, seed=rep)
            rows.append({"study": "global", "repetition": rep, **report.as_row()})
            if not certificate.boundary_count:
                logger.info(f"Repetition {rep}: no boundary points, skipping local study")
                continue
            x = certificate.reduction.lift(certificate.boundary_points[0])
            local = pipeline.local_study(pipeline.refine(certificate, x), seed=rep)
            if local is not None:
                rows.append({"study": "local", "repetition": rep, **local.as_row()})
    finally:
        pipeline.config = base

    global_rows = [r for r in rows if r["study"] == "global"]
    local_rows = [r for r in rows if r["study"] == "local"]
    print(f"global: {sum(bool(r['passed']) for r in global_rows)}/{len(global_rows)} repetitions pass, "
          f"local: {sum(bool(r['passed']) for r in local_rows)}/{len(local_rows)} "
          f"(took {time.time() - start_time:.1f}s)")

    emit_csv(rows, output_path)
    return rows


def main():
    config_path = sys.argv[1] if len(sys.argv) > 1 else "config/oracle.yaml"
    output_path = Path(sys.argv[2] if len(sys.argv) > 2 else "results/guarantees.csv")

    print("LOW-DIMENSIONAL GUARANTEE STUDY")
    print("=" * 60)
    success = True
    try:
        config = load_config(config_path)
        setup_logging(config.logging)
        run_guarantee_study(VerificationPipeline(config), output_path)
    except ReachCertError as e:
        print(f"Error: {e}")
        success = False

    if success:
        print("\n🎉 GUARANTEE STUDY COMPLETED SUCCESSFULLY!")
    else:
        print("\n❌ GUARANTEE STUDY FAILED!")

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
