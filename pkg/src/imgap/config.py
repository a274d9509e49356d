"""Dataclass configs, JSON round-trip, env-var overrides and config hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from typing import Any, get_type_hints


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 1."""


METHODS = ("bc", "sitt", "ours_no_align", "ours_no_stab", "ours")

ENV_OVERRIDE_PREFIX = "IMGAP_"


@dataclass
class EnvConfig:
    width: int = 11
    height: int = 11
    start: tuple[int, int] = (1, 1)
    goal: tuple[int, int] = (9, 9)
    obstacle_density: float = 0.12
    r_goal: float = 1.0
    r_collision: float = -1.0
    r_step: float = 0.01  # applied as -r_step per non-terminal step
    max_steps: int = 120


@dataclass
class NetConfig:
    policy_hidden: tuple[int, ...] = (64, 64)
    value_hidden: tuple[int, ...] = (64, 64)
    encoder_hidden: tuple[int, ...] = (64, 32)
    embed_dim: int = 16
    activation: str = "tanh"
    policy_out_gain: float = 0.1  # small -> near-uniform initial action dist


@dataclass
class EmbedConfig:
    lr: float = 1e-3
    anneal_lr: bool = True  # linear decay to zero over the budget
    tau_init: float = 0.1
    tau_min: float = 0.05  # positivity floor projected after each update
    w_contrastive: float = 1.0
    w_alignment: float = 1.0
    w_stability: float = 1.0
    epochs: int = 3
    minibatch: int = 256
    replay_rollouts: int = 1  # >1 keeps a short rollout history for encoder training


@dataclass
class PpoConfig:
    lr: float = 3e-3
    anneal_lr: bool = True  # linear decay to zero over the budget
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    c_value: float = 0.5
    c_entropy: float = 0.03
    epochs: int = 4
    minibatch: int = 256
    asymmetric_critic: bool = True  # critic sees raw teacher obs instead of the embedding


@dataclass
class TrainConfig:
    n_envs: int = 16
    horizon: int = 128  # rollout size per iteration = n_envs * horizon
    eval_every: int = 16
    eval_episodes: int = 100
    keep_checkpoints: bool = False  # keep one checkpoint file per evaluation


@dataclass
class BcConfig:
    teacher_frac: float = 0.6  # share of the env-step budget spent on teacher RL
    epochs: int = 30
    minibatch: int = 256
    lr: float = 1e-3


@dataclass
class SittConfig:
    alpha: float = 0.1
    alphas: tuple[float, ...] = (0.01, 0.05, 0.1, 0.5)
    student_epochs: int = 2
    student_minibatch: int = 256
    student_lr: float = 1e-3


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    net: NetConfig = field(default_factory=NetConfig)
    embed: EmbedConfig = field(default_factory=EmbedConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bc: BcConfig = field(default_factory=BcConfig)
    sitt: SittConfig = field(default_factory=SittConfig)
    method: str = "ours"
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    budget: int = 1_048_576  # total env steps per run
    out_dir: str = "runs"


_SECTIONS = ("env", "net", "embed", "ppo", "train", "bc", "sitt")


def _coerce(value: Any, target_type: Any) -> Any:
    """Coerce a JSON/env value into the declared field type."""
    origin = getattr(target_type, "__origin__", None)
    if origin is tuple:
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        args = target_type.__args__
        elem = args[0] if args else float
        if elem is Ellipsis:
            elem = float
        return tuple(_coerce(v, elem) for v in value)
    if target_type is bool:
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    if target_type is str:
        return str(value)
    return value


def _dataclass_from_dict(cls, data: dict):
    kwargs = {}
    hints = get_type_hints(cls)
    valid = {f.name for f in fields(cls)}
    for key, value in data.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {cls.__name__}.{key}")
        kwargs[key] = _coerce(value, hints[key])
    return cls(**kwargs)


def _section_class(name: str):
    return {
        "env": EnvConfig,
        "net": NetConfig,
        "embed": EmbedConfig,
        "ppo": PpoConfig,
        "train": TrainConfig,
        "bc": BcConfig,
        "sitt": SittConfig,
    }[name]


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> "ExperimentConfig":
    hints = get_type_hints(ExperimentConfig)
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            kwargs[key] = _dataclass_from_dict(_section_class(key), value)
        elif key in hints:
            kwargs[key] = _coerce(value, hints[key])
        else:
            raise ConfigError(f"unknown config key {key}")
    return ExperimentConfig(**kwargs)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = config_from_dict(data)
    return apply_env_overrides(cfg)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def apply_env_overrides(cfg: ExperimentConfig, environ: dict | None = None) -> ExperimentConfig:
    """Override any config key via IMGAP_<SECTION>__<FIELD> or IMGAP_<FIELD>."""
    environ = os.environ if environ is None else environ
    data = config_to_dict(cfg)
    for key, raw in environ.items():
        if not key.startswith(ENV_OVERRIDE_PREFIX):
            continue
        path = key[len(ENV_OVERRIDE_PREFIX):].lower().split("__")
        node = data
        for part in path[:-1]:
            if part not in node:
                raise ConfigError(f"unknown config section in override {key}")
            node = node[part]
        leaf = path[-1]
        if leaf not in node:
            raise ConfigError(f"unknown config key in override {key}")
        node[leaf] = raw
    return config_from_dict(data)


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the hyperparameters only (method/seeds/out_dir excluded)."""
    data = config_to_dict(cfg)
    hashed = {k: data[k] for k in (*_SECTIONS, "budget")}
    blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def rollout_size(cfg: ExperimentConfig) -> int:
    return cfg.train.n_envs * cfg.train.horizon


def validate_config(cfg: ExperimentConfig) -> None:
    env = cfg.env
    if not (0.0 <= env.obstacle_density <= 0.45):
        raise ConfigError(f"obstacle_density {env.obstacle_density} outside [0, 0.45]")
    if env.width < 5 or env.height < 5:
        raise ConfigError("grid must be at least 5x5")
    for name, cell in (("start", env.start), ("goal", env.goal)):
        x, y = cell
        if not (0 <= x < env.width and 0 <= y < env.height):
            raise ConfigError(f"{name} {cell} outside the grid")
    if tuple(env.start) == tuple(env.goal):
        raise ConfigError("start and goal must differ")
    if env.max_steps < 1:
        raise ConfigError("max_steps must be positive")
    if cfg.budget <= 0:
        raise ConfigError("budget must be positive")
    if cfg.budget % rollout_size(cfg) != 0:
        raise ConfigError(
            f"budget {cfg.budget} must be a multiple of the rollout size "
            f"{rollout_size(cfg)} (n_envs * horizon)")
    if cfg.method not in METHODS:
        raise ConfigError(f"unknown method {cfg.method!r}; expected one of {METHODS}")
    if not cfg.seeds:
        raise ConfigError("at least one seed required")
    if not (0.0 < cfg.bc.teacher_frac < 1.0):
        raise ConfigError("bc.teacher_frac must lie in (0, 1)")
    if cfg.sitt.alpha < 0 or any(a < 0 for a in cfg.sitt.alphas):
        raise ConfigError("sitt alpha values must be >= 0")
