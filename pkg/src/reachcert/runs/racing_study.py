#!/usr/bin/env python3
"""
Racing study: certify the surrogate overtaking policy, then compare all
eight controllers on the same seeded initial conditions.

    python -m reachcert.runs.racing_study config/production.yaml results/racing
"""

import sys
from pathlib import Path

from ..core.errors import ReachCertError
from ..pipeline import VerificationPipeline
from ..utils.config import load_config, setup_logging


def run_racing_study(config_path: str, output_dir: str) -> bool:
    """Run the full racing pipeline; returns False on any toolkit error."""
    print("RACING OVERTAKE STUDY")
    print("=" * 60)
    print(f"Config: {config_path}")
    print(f"Output: {output_dir}")

    try:
        config = load_config(config_path)
        setup_logging(config.logging)
        if config.benchmark.name != "racing":
            print(f"❌ {config_path} configures the '{config.benchmark.name}' benchmark")
            return False
        artifacts = VerificationPipeline(config).run_all(Path(output_dir))
    except ReachCertError as e:
        print("❌ Racing study failed!")
        print(f"Error: {e}")
        return False

    print(f"Certificate: {artifacts.certificate.certified_count} certified nominals")
    print(f"Tables written to: {output_dir}")
    return True


def main():
    config_path = sys.argv[1] if len(sys.argv) > 1 else "config/production.yaml"
    output_dir = sys.argv[2] if len(sys.argv) > 2 else "results/racing"

    success = run_racing_study(config_path, output_dir)

    if success:
        print("\n🎉 RACING STUDY COMPLETED SUCCESSFULLY!")
    else:
        print("\n❌ RACING STUDY FAILED!")

    sys.exit(0 if success else 1)


if __name__ == "__main__":
    main()
