#!/usr/bin/env python3
"""Run the full method comparison at the default config and print the table.

Every method trains on the same env-step budget across the same seeds; the
KL baseline fans out over its alpha sweep and reports its best alpha.
"""
import argparse
import sys

from imgap.config import ExperimentConfig, apply_env_overrides
from imgap.harness import format_table, run_experiment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="runs")
    parser.add_argument("--seeds", default=None, help="comma-separated, default 1-5")
    parser.add_argument("--budget", type=int, default=None)
    parser.add_argument("--methods", default=None,
                        help="subset, e.g. bc,ours (default: all)")
    args = parser.parse_args()

    cfg = apply_env_overrides(ExperimentConfig())
    cfg.out_dir = args.out_dir
    if args.seeds:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    if args.budget:
        cfg.budget = args.budget
    methods = tuple(args.methods.split(",")) if args.methods else None

    table = run_experiment(cfg, methods=methods)
    print(format_table(table))
    return 0


if __name__ == "__main__":
    sys.exit(main())
