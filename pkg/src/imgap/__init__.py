"""Teacher-student imitation-gap experiments on a partially observable gridworld.

A privileged teacher and a narrow-view student share one policy head over a
contrastively learned embedding space; baselines (behavior cloning, KL-penalized
joint training) and ablations reproduce the standard comparison table.
"""
from .config import (
    EnvConfig,
    ExperimentConfig,
    ConfigError,
    config_hash,
    load_config,
    validate_config,
)
from .grid_env import Action, GridState, MapLayout, ObsPair, Orientation, Terminal, TunnelVisionEnv

__all__ = [
    "Action",
    "ConfigError",
    "EnvConfig",
    "ExperimentConfig",
    "GridState",
    "MapLayout",
    "ObsPair",
    "Orientation",
    "Terminal",
    "TunnelVisionEnv",
    "config_hash",
    "load_config",
    "validate_config",
]
