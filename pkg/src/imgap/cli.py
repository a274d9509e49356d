"""Command line driver: train / eval / sweep / table.

Exit codes: 0 success, 1 configuration error, 2 run failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import ConfigError, ExperimentConfig, apply_env_overrides, load_config
from .harness import (
    RunError,
    aggregate_table,
    evaluate_checkpoint,
    format_table,
    run_experiment,
    run_single,
)


class _ArgumentError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="imgap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one (method, seed) training run")
    p_train.add_argument("--config", help="JSON experiment config (defaults used if omitted)")
    p_train.add_argument("--method", default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out-dir", default=None)

    p_eval = sub.add_parser("eval", help="evaluate a saved checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)

    p_sweep = sub.add_parser("sweep", help="run the KL-baseline alpha sweep")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--alphas", default=None, help="comma-separated, e.g. 0.01,0.1")
    p_sweep.add_argument("--seeds", default=None, help="comma-separated seed list")
    p_sweep.add_argument("--out-dir", default=None)

    p_table = sub.add_parser("table", help="aggregate completed runs into the table")
    p_table.add_argument("--runs", required=True)

    p_run = sub.add_parser("run-all", help="train every method and emit the table")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--out-dir", default=None)
    return parser


def _load(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = apply_env_overrides(ExperimentConfig())
    if getattr(args, "out_dir", None):
        cfg.out_dir = args.out_dir
    return cfg


def _cmd_train(args) -> int:
    cfg = _load(args)
    method = args.method or cfg.method
    seed = cfg.seeds[0] if args.seed is None else args.seed
    result = run_single(cfg, method, seed)
    print(json.dumps(dataclasses.asdict(result), sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    out = evaluate_checkpoint(args.checkpoint, args.episodes, args.seed)
    print(json.dumps(out, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.alphas:
        alphas = tuple(float(a) for a in args.alphas.split(",") if a)
    else:
        alphas = cfg.sitt.alphas
    seeds = cfg.seeds
    if args.seeds:
        seeds = tuple(int(s) for s in args.seeds.split(",") if s)
    results = []
    for alpha in alphas:
        for seed in seeds:
            results.append(run_single(cfg, "sitt", seed, alpha=alpha))
    for r in results:
        print(json.dumps(dataclasses.asdict(r), sort_keys=True))
    return 0


def _cmd_table(args) -> int:
    table = aggregate_table(args.runs)
    print(format_table(table))
    return 0


def _cmd_run_all(args) -> int:
    cfg = _load(args)
    table = run_experiment(cfg)
    print(format_table(table))
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "table": _cmd_table,
    "run-all": _cmd_run_all,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (RunError, FloatingPointError, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
