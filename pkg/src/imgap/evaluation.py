"""Success-rate evaluation over freshly seeded episode batches."""
from __future__ import annotations

import numpy as np

from .config import EnvConfig
from .grid_env import STUDENT_OBS_DIM, TEACHER_OBS_DIM, Terminal, TunnelVisionEnv


def greedy_actor(forward):
    """Wrap a batched obs->logits function into an argmax actor."""
    def act(obs_batch: np.ndarray) -> np.ndarray:
        logits = forward(obs_batch)
        return np.argmax(logits, axis=-1)
    return act


def evaluate(actor, env_cfg: EnvConfig, episodes: int, seed: int,
             side: str = "teacher") -> float:
    """Fraction of episodes ending in success.

    Episodes run in lockstep; map seeds derive from `seed` independently of
    batching, so results are reproducible. `side` selects what the actor sees:
    "teacher"/"student" pass the corresponding observation batch (B, dim),
    "state" passes the list of full episode states (for oracle agents).
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if side not in ("teacher", "student", "state"):
        raise ValueError(f"unknown side {side!r}")
    env = TunnelVisionEnv(env_cfg)
    ep_seeds = np.random.default_rng(seed).integers(0, 2**63, size=episodes)

    states = []
    obs_t = np.empty((episodes, TEACHER_OBS_DIM))
    obs_s = np.empty((episodes, STUDENT_OBS_DIM))
    for i in range(episodes):
        state, pair = env.reset(int(ep_seeds[i]))
        states.append(state)
        obs_t[i] = pair.teacher
        obs_s[i] = pair.student

    active = np.ones(episodes, dtype=bool)
    successes = 0
    while np.any(active):
        idx = np.nonzero(active)[0]
        if side == "teacher":
            actions = actor(obs_t[idx])
        elif side == "student":
            actions = actor(obs_s[idx])
        else:
            actions = actor([states[i] for i in idx])
        for j, i in enumerate(idx):
            state, pair, _, done = env.step(states[i], int(actions[j]))
            states[i] = state
            if done:
                active[i] = False
                if state.terminal == Terminal.SUCCESS:
                    successes += 1
            else:
                obs_t[i] = pair.teacher
                obs_s[i] = pair.student
    return successes / episodes
