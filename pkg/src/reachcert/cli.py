#!/usr/bin/env python3
"""
Command-line entry point.

Usage:
    python -m reachcert.cli plan-samples --config config/development.yaml
    python -m reachcert.cli bound-dynamics --config config/development.yaml --output results/profile.json
    python -m reachcert.cli certify --config config/development.yaml --output results/certificate.json
    python -m reachcert.cli refine --config config/oracle.yaml --certificate results/certificate.json --state 0.4 0.1
    python -m reachcert.cli simulate --config config/development.yaml --certificate results/certificate.json --method hybrid
    python -m reachcert.cli evaluate --config config/development.yaml --certificate results/certificate.json
    python -m reachcert.cli oracle --config config/oracle.yaml --output results/oracle.csv
    python -m reachcert.cli violation --config config/oracle.yaml
    python -m reachcert.cli pipeline --config config/production.yaml --output-dir results/racing
"""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional

import numpy as np

from .core.errors import ReachCertError
from .core.scenario_engine import required_samples
from .pipeline import VerificationPipeline
from .runs.guarantee_study import run_guarantee_study
from .utils.config import load_config, setup_logging
from .utils.results_io import (certificate_records, emit_csv, emit_profile_csv, load_certificate, load_profile,
                               save_certificate, save_profile)

logger = logging.getLogger(__name__)


def _state(values: Optional[List[float]], pipeline: VerificationPipeline, seed: int) -> np.ndarray:
    if values:
        return np.asarray(values, dtype=np.float64)
    e = pipeline.config.experiment
    rng = np.random.default_rng(seed)
    return rng.uniform(e.initial_low, e.initial_high)


def cmd_plan_samples(pipeline: VerificationPipeline, args) -> bool:
    n = required_samples(pipeline.scenario_config())
    s = pipeline.config.scenario
    print(f"epsilon={s.epsilon}, beta={s.beta}, d={s.decision_dim} -> N = {n}")
    return True


def cmd_bound_dynamics(pipeline: VerificationPipeline, args) -> bool:
    print("\nSTEP 1: Bounding trajectory deviations...")
    start_time = time.time()
    profile = pipeline.bound_dynamics()
    save_profile(profile, args.output)
    emit_profile_csv(profile, Path(args.output).with_suffix(".csv"))
    print(f"Profile saved to: {args.output} (took {time.time() - start_time:.1f}s)")
    return True


def cmd_certify(pipeline: VerificationPipeline, args) -> bool:
    print("\nSTEP 1: Loading or bounding deviation profile...")
    profile = load_profile(args.profile) if args.profile else pipeline.bound_dynamics()
    print(f"Profile horizon {profile.horizon}, dx*_T = {profile.bounds[-1]:.4f}")

    print("\nSTEP 2: Building global certificate...")
    start_time = time.time()
    certificate = pipeline.certify(profile, show_progress=True)
    save_certificate(certificate, args.output)
    if args.csv:
        emit_csv(certificate_records(certificate), args.csv)
    print(f"Certified {certificate.certified_count}/{certificate.points.shape[0]} nominals "
          f"(took {time.time() - start_time:.1f}s)")
    return True


def cmd_refine(pipeline: VerificationPipeline, args) -> bool:
    certificate = load_certificate(args.certificate)
    x = _state(args.state, pipeline, args.seed)
    result = pipeline.refine(certificate, x)
    emit_csv(result.history(), args.output, columns=("iteration", "radius", "violations"))
    print(f"Refinement {result.status} after {result.iterations} iterations")
    if result.succeeded:
        lc = result.certificate
        print(f"   center={np.array2string(lc.center, precision=4)}, r*={lc.radius:.5f}, policy={lc.policy_id}")
    return True


def cmd_simulate(pipeline: VerificationPipeline, args) -> bool:
    certificate = load_certificate(args.certificate) if args.certificate else None
    x0 = _state(args.state, pipeline, args.seed)
    log = pipeline.simulate(certificate, args.method, x0, seed=args.seed)
    emit_csv(log.rows(), args.output)
    print(f"{args.method}: {log.outcome} after {log.steps} steps, tiers {log.tier_histogram()}")
    return True


def cmd_evaluate(pipeline: VerificationPipeline, args) -> bool:
    certificate = load_certificate(args.certificate) if args.certificate else None
    output_dir = Path(args.output_dir or pipeline.config.experiment.output_dir)
    tables = pipeline.evaluate(certificate, methods=args.methods, trials=args.trials, output_dir=output_dir)
    emit_csv([t.as_row() for t in tables], output_dir / "success_table.csv")
    for table in tables:
        low, high = table.interval
        print(f"   {table.method:22s} {table.success_fraction:.3f} [{low:.3f}, {high:.3f}]")
    return True


def cmd_oracle(pipeline: VerificationPipeline, args) -> bool:
    print("\nSTEP 1: Building oracle table...")
    start_time = time.time()
    oracle = pipeline.build_oracle(show_progress=True)
    emit_csv(oracle.rows(), args.output)
    print(f"Oracle over {oracle.values.size} nodes saved to: {args.output} (took {time.time() - start_time:.1f}s)")
    return True


def cmd_violation(pipeline: VerificationPipeline, args) -> bool:
    run_guarantee_study(pipeline, Path(args.output), repetitions=args.repetitions)
    return True


def cmd_pipeline(pipeline: VerificationPipeline, args) -> bool:
    pipeline.run_all(Path(args.output_dir or pipeline.config.experiment.output_dir), trials=args.trials)
    return True


COMMANDS = {
    "plan-samples": cmd_plan_samples,
    "bound-dynamics": cmd_bound_dynamics,
    "certify": cmd_certify,
    "refine": cmd_refine,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "violation": cmd_violation,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Probabilistic reach-avoid verification toolkit")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default="config/development.yaml", help="YAML configuration file")
    parser.add_argument("--output", default=None, help="Output file")
    parser.add_argument("--output-dir", default=None, help="Output directory for studies")
    parser.add_argument("--profile", default=None, help="Deviation profile file for certify")
    parser.add_argument("--certificate", default=None, help="Certificate file")
    parser.add_argument("--csv", default=None, help="Also export certificate records as CSV")
    parser.add_argument("--state", type=float, nargs="+", default=None, help="Initial / query state")
    parser.add_argument("--method", default="hybrid", help="Controller method for simulate")
    parser.add_argument("--methods", nargs="+", default=None, help="Methods for evaluate")
    parser.add_argument("--trials", type=int, default=None, help="Override trial count")
    parser.add_argument("--repetitions", type=int, default=None, help="Override study repetitions")
    parser.add_argument("--seed", type=int, default=0)
    return parser


DEFAULT_OUTPUTS = {
    "bound-dynamics": "results/profile.json",
    "certify": "results/certificate.json",
    "refine": "results/refinement.csv",
    "simulate": "results/episode.csv",
    "oracle": "results/oracle.csv",
    "violation": "results/violation.csv",
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.output is None:
        args.output = DEFAULT_OUTPUTS.get(args.command)
    if args.command in ("refine",) and not args.certificate:
        print("--certificate is required for refine")
        return 1

    try:
        config = load_config(args.config)
        setup_logging(config.logging)
        pipeline = VerificationPipeline(config)
        success = COMMANDS[args.command](pipeline, args)
    except ReachCertError as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0 if success else 1


if __name__ == "__main__":
    sys.exit(main())
