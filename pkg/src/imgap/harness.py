"""Experiment driver: per-run artifacts, seed fan-out, aggregation into the
method comparison table (teacher / student success and the gap between them).
"""
from __future__ import annotations

import dataclasses
import json
import os
import time
from dataclasses import dataclass

import numpy as np

from . import baselines, orchestrator
from .checkpoint import (
    encoder_pair_from_arrays,
    encoder_pair_to_arrays,
    load_checkpoint,
    mlp_from_arrays,
    mlp_to_arrays,
    save_checkpoint,
)
from .config import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    config_hash,
    config_to_dict,
    validate_config,
)
from .embedding import encode
from .evaluation import evaluate, greedy_actor
from .nn import mlp_forward
from .orchestrator import CURVE_COLUMNS


class RunError(RuntimeError):
    """A training run failed or produced inconsistent artifacts; CLI exit code 2."""


@dataclass
class MethodResult:
    method: str
    seed: int
    sr_teacher: float
    sr_student: float
    gap: float
    config_hash: str
    alpha: float | None = None
    env_steps: int = 0
    wall_time_s: float = 0.0


def imitation_gap(sr_teacher: float, sr_student: float) -> float:
    for name, v in (("sr_teacher", sr_teacher), ("sr_student", sr_student)):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"{name}={v} outside [0, 1]")
    return sr_teacher - sr_student


class CurveWriter:
    """Append-only CSV sink with a fixed column schema."""

    def __init__(self, path):
        self.path = path
        with open(path, "w") as fh:
            fh.write(",".join(CURVE_COLUMNS) + "\n")

    def __call__(self, row: dict) -> None:
        cells = [str(int(row["env_steps"]))]
        cells += [f"{float(row[c]):.6f}" for c in CURVE_COLUMNS[1:]]
        with open(self.path, "a") as fh:
            fh.write(",".join(cells) + "\n")


def read_curves(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            values = line.strip().split(",")
            rows.append({k: float(v) for k, v in zip(header, values)})
    return rows


def run_name(method: str, seed: int, alpha: float | None = None) -> str:
    if alpha is None:
        return f"{method}_seed{seed}"
    return f"{method}_a{alpha:g}_seed{seed}"


def _checkpoint_writer(run_dir, cfg: ExperimentConfig, method: str):
    keep = cfg.train.keep_checkpoints

    def write(ts, env_steps: int) -> None:
        arrays = encoder_pair_to_arrays(ts.encoders)
        arrays.update(mlp_to_arrays("policy", ts.policy))
        arrays.update(mlp_to_arrays("value", ts.value_net))
        meta = {"method": method, "env_steps": env_steps,
                "config": config_to_dict(cfg)}
        name = f"checkpoint_{env_steps}.npz" if keep else "checkpoint.npz"
        save_checkpoint(os.path.join(run_dir, name), arrays, meta)
        if keep:
            save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), arrays, meta)
    return write


def _save_baseline_checkpoint(run_dir, cfg, method, result) -> None:
    arrays = mlp_to_arrays("policy", result.policy)
    arrays.update(mlp_to_arrays("value", result.value_net))
    if result.student is not None:
        arrays.update(mlp_to_arrays("student", result.student))
    meta = {"method": method, "env_steps": result.env_steps,
            "config": config_to_dict(cfg)}
    save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), arrays, meta)


def run_single(cfg: ExperimentConfig, method: str, seed: int,
               alpha: float | None = None, out_root: str | None = None) -> MethodResult:
    """One (method, seed) training run; writes curves.csv, checkpoint.npz, result.json."""
    validate_config(cfg)
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}")
    chash = config_hash(cfg)
    out_root = cfg.out_dir if out_root is None else out_root
    run_dir = os.path.join(out_root, chash, run_name(method, seed, alpha))
    os.makedirs(run_dir, exist_ok=True)
    curve_writer = CurveWriter(os.path.join(run_dir, "curves.csv"))

    if method in ("ours", "ours_no_align", "ours_no_stab"):
        run_cfg = baselines.method_config(cfg, method)
        result = orchestrator.train(run_cfg, seed, curve_writer,
                                    _checkpoint_writer(run_dir, run_cfg, method))
        arrays = encoder_pair_to_arrays(result.encoders)
        arrays.update(mlp_to_arrays("policy", result.policy))
        arrays.update(mlp_to_arrays("value", result.value_net))
        save_checkpoint(os.path.join(run_dir, "checkpoint.npz"), arrays,
                        {"method": method, "env_steps": result.env_steps,
                         "config": config_to_dict(run_cfg)})
    elif method == "bc":
        result = baselines.train_bc(cfg, seed, curve_writer)
        _save_baseline_checkpoint(run_dir, cfg, method, result)
    else:
        alpha = cfg.sitt.alpha if alpha is None else alpha
        result = baselines.train_sitt(cfg, alpha, seed, curve_writer)
        _save_baseline_checkpoint(run_dir, cfg, method, result)

    if result.env_steps != cfg.budget:
        raise RunError(
            f"run consumed {result.env_steps} env steps, budget is {cfg.budget}")
    mr = MethodResult(
        method=method,
        seed=seed,
        sr_teacher=result.sr_teacher,
        sr_student=result.sr_student,
        gap=imitation_gap(result.sr_teacher, result.sr_student),
        config_hash=chash,
        alpha=alpha if method == "sitt" else None,
        env_steps=result.env_steps,
        wall_time_s=result.wall_time_s,
    )
    with open(os.path.join(run_dir, "result.json"), "w") as fh:
        json.dump(dataclasses.asdict(mr), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return mr


def _collect_results(runs_dir) -> list[dict]:
    results = []
    for dirpath, _, filenames in os.walk(runs_dir):
        if "result.json" in filenames:
            with open(os.path.join(dirpath, "result.json")) as fh:
                results.append(json.load(fh))
    if not results:
        raise RunError(f"no result.json files under {runs_dir}")
    hashes = {r["config_hash"] for r in results}
    if len(hashes) > 1:
        raise RunError(f"refusing to mix configs in one table: hashes {sorted(hashes)}")
    return results


def aggregate_table(runs_dir) -> dict:
    """Mean success rates per method, best-alpha selection for the KL baseline.

    Row order: bc, sitt, ours_no_align, ours_no_stab, ours.
    """
    results = _collect_results(runs_dir)
    rows = []
    for method in METHODS:
        mine = [r for r in results if r["method"] == method]
        if not mine:
            continue
        if method == "sitt":
            by_alpha: dict[float, list[dict]] = {}
            for r in mine:
                by_alpha.setdefault(r["alpha"], []).append(r)
            best_alpha, best = max(
                by_alpha.items(),
                key=lambda kv: (np.mean([r["sr_student"] for r in kv[1]]), kv[0]))
            mine = best
        sr_t = float(np.mean([r["sr_teacher"] for r in mine]))
        sr_s = float(np.mean([r["sr_student"] for r in mine]))
        row = {
            "method": method,
            "sr_teacher": sr_t,
            "sr_student": sr_s,
            "gap": sr_t - sr_s,
            "n_seeds": len(mine),
            "seeds": sorted(r["seed"] for r in mine),
        }
        if method == "sitt":
            row["alpha"] = best_alpha
        rows.append(row)
    return {"rows": rows, "config_hash": results[0]["config_hash"]}


def format_table(table: dict) -> str:
    lines = [f"{'method':<16} {'T':>6} {'S':>6} {'gap':>6}  seeds"]
    for row in table["rows"]:
        extra = f" alpha={row['alpha']:g}" if "alpha" in row else ""
        lines.append(
            f"{row['method']:<16} {row['sr_teacher']:>6.2f} {row['sr_student']:>6.2f} "
            f"{row['gap']:>6.2f}  n={row['n_seeds']}{extra}")
    return "\n".join(lines)


def run_experiment(cfg: ExperimentConfig, methods=None) -> dict:
    """Run every (method, seed) combination and aggregate the comparison table.

    The KL baseline fans out over cfg.sitt.alphas; the table keeps its best
    alpha by mean student success.
    """
    validate_config(cfg)
    methods = METHODS if methods is None else tuple(methods)
    if len(cfg.seeds) < 5:
        print(f"warning: {len(cfg.seeds)} seeds; headline tables expect >= 5")
    for method in methods:
        alphas = cfg.sitt.alphas if method == "sitt" else (None,)
        for alpha in alphas:
            for seed in cfg.seeds:
                run_single(cfg, method, seed, alpha=alpha)
    out_root = os.path.join(cfg.out_dir, config_hash(cfg))
    table = aggregate_table(out_root)
    with open(os.path.join(out_root, "table.json"), "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return table


def actors_from_checkpoint(arrays: dict, meta: dict):
    """Rebuild (teacher_actor, student_actor) for evaluation from saved arrays."""
    method = meta.get("method", "ours")
    activation = meta.get("config", {}).get("net", {}).get("activation", "tanh")
    policy = mlp_from_arrays("policy", arrays, activation)
    if method in ("ours", "ours_no_align", "ours_no_stab"):
        enc = encoder_pair_from_arrays(arrays, activation)
        teacher = greedy_actor(lambda obs: mlp_forward(policy, encode(enc.teacher, obs))[0])
        student = greedy_actor(lambda obs: mlp_forward(policy, encode(enc.student, obs))[0])
        return teacher, student
    teacher = greedy_actor(lambda obs: mlp_forward(policy, obs)[0])
    student = None
    if any(k.startswith("student.") for k in arrays):
        student_net = mlp_from_arrays("student", arrays, activation)
        student = greedy_actor(lambda obs: mlp_forward(student_net, obs)[0])
    return teacher, student


def evaluate_checkpoint(path, episodes: int, seed: int) -> dict:
    arrays, meta = load_checkpoint(path)
    if "config" not in meta:
        raise RunError(f"checkpoint {path} carries no config metadata")
    from .config import config_from_dict
    cfg = config_from_dict(meta["config"])
    teacher, student = actors_from_checkpoint(arrays, meta)
    sr_teacher = evaluate(teacher, cfg.env, episodes, seed, side="teacher")
    out = {"method": meta.get("method"), "episodes": episodes, "seed": seed,
           "sr_teacher": sr_teacher}
    if student is not None:
        sr_student = evaluate(student, cfg.env, episodes, seed, side="student")
        out["sr_student"] = sr_student
        out["gap"] = imitation_gap(sr_teacher, sr_student)
    return out
