#!/usr/bin/env python3
"""Two-minute sanity run: a short shared-embedding training plus a BC teacher,
printing success-rate curves to the terminal. Useful for a quick look at the
training dynamics without committing to a full table run.
"""
import argparse
import sys

from imgap.config import ExperimentConfig, rollout_size
from imgap.orchestrator import train


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--iterations", type=int, default=120)
    args = parser.parse_args()

    cfg = ExperimentConfig()
    cfg.budget = rollout_size(cfg) * args.iterations
    cfg.train.eval_every = 10

    def show(row):
        print(f"steps {row['env_steps']:>8d}  teacher {row['sr_teacher']:.2f}  "
              f"student {row['sr_student']:.2f}  contrastive {row['loss_contrastive']:.3f}  "
              f"tau {row['tau']:.3f}")

    result = train(cfg, args.seed, curve_writer=show)
    print(f"final: teacher {result.sr_teacher:.2f}, student {result.sr_student:.2f}, "
          f"{result.env_steps} env steps in {result.wall_time_s:.0f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
