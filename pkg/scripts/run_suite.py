#!/usr/bin/env python3
"""Run the pinned oracle phantom suite and print the per-iteration table.

Usage: python scripts/run_suite.py [--frequency {1,2,5}] [--out DIR]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from segloop.harness import ExperimentConfig, run_experiment  # noqa: E402

CONFIGS = {1: "oracle_dense", 2: "oracle_every2", 5: "oracle_every5"}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--frequency", type=int, choices=sorted(CONFIGS), default=1)
    parser.add_argument("--out", help="output directory (defaults to the config's)")
    args = parser.parse_args()
    root = os.path.join(os.path.dirname(__file__), "..")
    cfg = ExperimentConfig.from_file(os.path.join(root, "configs",
                                                  f"{CONFIGS[args.frequency]}.json"))
    result = run_experiment(cfg, output_dir=args.out)
    print(f"records: {result.records_path}")
    with open(os.path.join(result.output_dir, "aggregate.csv")) as fh:
        print(fh.read().rstrip())
    print("summary:", result.summary)
    return 3 if result.failures else 0


if __name__ == "__main__":
    sys.exit(main())
