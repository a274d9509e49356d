"""Partially observable navigation gridworld with paired observation channels.

One underlying episode state feeds two observation functions: the teacher
channel sees the full 8-cell neighborhood, the student channel only the three
cells in its facing direction. Maps are regenerated per episode from a seed
with guaranteed start-to-goal solvability.

Coordinates are screen-style: x grows east, y grows south, so "north" is y-1.
Cells outside the grid read as permanently occupied and colliding with them
ends the episode like an obstacle would.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .config import ConfigError, EnvConfig

TEACHER_OBS_DIM = 16
STUDENT_OBS_DIM = 11
N_ACTIONS = 8

MAX_MAP_ATTEMPTS = 10_000

# obstacle placement is biased toward the straight start-goal corridor so that
# goal-seeking behavior meets obstacles while the periphery stays navigable
CORRIDOR_BAND = 1.5
CORRIDOR_WEIGHT = 3.0
OFF_CORRIDOR_WEIGHT = 0.5
# minimum Chebyshev spacing between obstacles; keeps them isolated singletons
# (always circumnavigable) so failures come from limited view, not map traps
OBSTACLE_SPACING = 2


class Orientation(IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


class Action(IntEnum):
    MOVE_N = 0
    MOVE_E = 1
    MOVE_S = 2
    MOVE_W = 3
    FACE_N = 4
    FACE_E = 5
    FACE_S = 6
    FACE_W = 7


class Terminal(IntEnum):
    RUNNING = 0
    SUCCESS = 1
    COLLISION = 2
    TIMEOUT = 3


DIR_VECS = {
    Orientation.N: (0, -1),
    Orientation.E: (1, 0),
    Orientation.S: (0, 1),
    Orientation.W: (-1, 0),
}

# 8-neighborhood reading order: N, NE, E, SE, S, SW, W, NW
NEIGHBOR_OFFSETS = ((0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1))

# Indices into NEIGHBOR_OFFSETS for the (front-left, front, front-right) cone.
FACING_NEIGHBOR_IDX = {
    Orientation.N: (7, 0, 1),
    Orientation.E: (1, 2, 3),
    Orientation.S: (3, 4, 5),
    Orientation.W: (5, 6, 7),
}


@dataclass(frozen=True)
class MapLayout:
    width: int
    height: int
    obstacles: frozenset
    start: tuple[int, int]
    goal: tuple[int, int]


@dataclass(frozen=True)
class GridState:
    layout: MapLayout
    pos: tuple[int, int]
    orientation: Orientation
    steps: int
    terminal: Terminal


@dataclass(frozen=True)
class ObsPair:
    teacher: np.ndarray  # (16,)
    student: np.ndarray  # (11,)


def occupied(layout: MapLayout, cell: tuple[int, int]) -> bool:
    x, y = cell
    if not (0 <= x < layout.width and 0 <= y < layout.height):
        return True
    return cell in layout.obstacles


def _path_exists(layout: MapLayout) -> bool:
    """4-connected reachability from start to goal over free cells."""
    if occupied(layout, layout.start) or occupied(layout, layout.goal):
        return False
    seen = {layout.start}
    queue = deque([layout.start])
    while queue:
        x, y = queue.popleft()
        if (x, y) == layout.goal:
            return True
        for dx, dy in ((0, -1), (1, 0), (0, 1), (-1, 0)):
            nxt = (x + dx, y + dy)
            if nxt not in seen and not occupied(layout, nxt):
                seen.add(nxt)
                queue.append(nxt)
    return False


def _segment_distance(px: float, py: float, ax: float, ay: float,
                      bx: float, by: float) -> float:
    vx, vy = bx - ax, by - ay
    denom = vx * vx + vy * vy
    t = 0.0 if denom == 0 else max(0.0, min(1.0, ((px - ax) * vx + (py - ay) * vy) / denom))
    dx, dy = px - (ax + t * vx), py - (ay + t * vy)
    return float(np.hypot(dx, dy))


_WEIGHT_CACHE: dict = {}


def _cell_weights(cfg: EnvConfig) -> np.ndarray:
    """Per-cell obstacle weight: heavier inside the start-goal corridor band."""
    key = (cfg.width, cfg.height, tuple(cfg.start), tuple(cfg.goal))
    cached = _WEIGHT_CACHE.get(key)
    if cached is None:
        sx, sy = cfg.start
        gx, gy = cfg.goal
        weights = np.empty((cfg.height, cfg.width))
        for y in range(cfg.height):
            for x in range(cfg.width):
                d = _segment_distance(x, y, sx, sy, gx, gy)
                weights[y, x] = CORRIDOR_WEIGHT if d <= CORRIDOR_BAND else OFF_CORRIDOR_WEIGHT
        cached = _WEIGHT_CACHE[key] = weights
    return cached


def generate_map(seed: int, cfg: EnvConfig) -> MapLayout:
    """Sample a solvable obstacle layout; same (seed, cfg) gives identical maps.

    round(obstacle_density * cells) obstacle sites are drawn one by one from
    the corridor-weighted distribution, keeping OBSTACLE_SPACING between sites
    and avoiding start/goal. Unsolvable or unplaceable samples are rejected
    and redrawn from the next derived sub-seed.
    """
    if not (0.0 <= cfg.obstacle_density <= 0.45):
        raise ConfigError(f"obstacle_density {cfg.obstacle_density} outside [0, 0.45]")
    if cfg.width < 5 or cfg.height < 5:
        raise ConfigError("grid must be at least 5x5")
    start = tuple(cfg.start)
    goal = tuple(cfg.goal)
    n_cells = cfg.width * cfg.height
    n_obstacles = int(round(cfg.obstacle_density * n_cells))
    base_weights = _cell_weights(cfg).ravel()
    base_weights[start[1] * cfg.width + start[0]] = 0.0
    base_weights[goal[1] * cfg.width + goal[0]] = 0.0
    for attempt in range(MAX_MAP_ATTEMPTS):
        rng = np.random.default_rng([int(seed), attempt])
        draws = rng.random(n_obstacles)
        weights = base_weights.copy()
        obstacles = set()
        for u in draws:
            cdf = np.cumsum(weights)
            total = cdf[-1]
            if total <= 0.0:
                break  # grid saturated; reject this attempt
            idx = int(np.searchsorted(cdf, u * total, side="right"))
            x, y = idx % cfg.width, idx // cfg.width
            obstacles.add((x, y))
            for dy in range(-OBSTACLE_SPACING + 1, OBSTACLE_SPACING):
                for dx in range(-OBSTACLE_SPACING + 1, OBSTACLE_SPACING):
                    nx, ny = x + dx, y + dy
                    if 0 <= nx < cfg.width and 0 <= ny < cfg.height:
                        weights[ny * cfg.width + nx] = 0.0
        if len(obstacles) < n_obstacles:
            continue
        layout = MapLayout(cfg.width, cfg.height, frozenset(obstacles), start, goal)
        if _path_exists(layout):
            return layout
    raise ConfigError(
        f"no solvable map within {MAX_MAP_ATTEMPTS} attempts "
        f"(density={cfg.obstacle_density}, grid={cfg.width}x{cfg.height})")


def obs_teacher(state: GridState) -> np.ndarray:
    """16-dim view: normalized pose, orientation one-hot, 8-cell occupancy, goal offset."""
    layout = state.layout
    x, y = state.pos
    gx, gy = layout.goal
    obs = np.empty(TEACHER_OBS_DIM, dtype=np.float64)
    obs[0] = x / layout.width
    obs[1] = y / layout.height
    obs[2:6] = 0.0
    obs[2 + int(state.orientation)] = 1.0
    for i, (dx, dy) in enumerate(NEIGHBOR_OFFSETS):
        obs[6 + i] = 1.0 if occupied(layout, (x + dx, y + dy)) else 0.0
    obs[14] = (gx - x) / (layout.width - 1)
    obs[15] = (gy - y) / (layout.height - 1)
    return obs


def obs_student(state: GridState) -> np.ndarray:
    """11-dim view: pose and goal as the teacher, but only the 3 facing cells."""
    layout = state.layout
    x, y = state.pos
    gx, gy = layout.goal
    obs = np.empty(STUDENT_OBS_DIM, dtype=np.float64)
    obs[0] = x / layout.width
    obs[1] = y / layout.height
    obs[2:6] = 0.0
    obs[2 + int(state.orientation)] = 1.0
    for i, k in enumerate(FACING_NEIGHBOR_IDX[state.orientation]):
        dx, dy = NEIGHBOR_OFFSETS[k]
        obs[6 + i] = 1.0 if occupied(layout, (x + dx, y + dy)) else 0.0
    obs[9] = (gx - x) / (layout.width - 1)
    obs[10] = (gy - y) / (layout.height - 1)
    return obs


def obs_pair(state: GridState) -> ObsPair:
    return ObsPair(teacher=obs_teacher(state), student=obs_student(state))


class TunnelVisionEnv:
    """Rule engine bound to one EnvConfig; episode state is an explicit value.

    Instances hold no mutable state, so one env object can serve many
    concurrent episodes as long as each state is threaded by a single caller.
    """

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg

    def reset(self, seed: int) -> tuple[GridState, ObsPair]:
        layout = generate_map(seed, self.cfg)
        state = GridState(layout, tuple(self.cfg.start), Orientation.E, 0, Terminal.RUNNING)
        return state, obs_pair(state)

    def step(self, state: GridState, action: int) -> tuple[GridState, ObsPair, float, bool]:
        if state.terminal != Terminal.RUNNING:
            raise ValueError("step() on a terminal state")
        cfg = self.cfg
        act = Action(action)
        steps = state.steps + 1
        pos = state.pos
        orientation = state.orientation
        if act >= Action.FACE_N:
            orientation = Orientation(int(act) - 4)
            reward = -cfg.r_step
            terminal = Terminal.TIMEOUT if steps >= cfg.max_steps else Terminal.RUNNING
        else:
            direction = Orientation(int(act))
            dx, dy = DIR_VECS[direction]
            target = (pos[0] + dx, pos[1] + dy)
            if target == state.layout.goal:
                pos = target
                reward = cfg.r_goal
                terminal = Terminal.SUCCESS
            elif occupied(state.layout, target):
                reward = cfg.r_collision
                terminal = Terminal.COLLISION
            else:
                pos = target
                reward = -cfg.r_step
                terminal = Terminal.TIMEOUT if steps >= cfg.max_steps else Terminal.RUNNING
        new_state = GridState(state.layout, pos, orientation, steps, terminal)
        return new_state, obs_pair(new_state), reward, terminal != Terminal.RUNNING


class VecGridEnv:
    """Lockstep pool of episodes that auto-resets finished ones.

    Episode seeds flow from per-slot generators spawned off one seed, so a
    fixed (seed, n_envs, action sequence) replays identically.
    """

    def __init__(self, cfg: EnvConfig, n_envs: int, seed):
        self.env = TunnelVisionEnv(cfg)
        self.n_envs = n_envs
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._seed_rngs = [np.random.default_rng(child) for child in root.spawn(n_envs)]
        self.states = []
        self.obs_t = np.empty((n_envs, TEACHER_OBS_DIM))
        self.obs_s = np.empty((n_envs, STUDENT_OBS_DIM))
        self._returns = np.zeros(n_envs)
        for i in range(n_envs):
            self._reset_slot(i)

    def _next_seed(self, i: int) -> int:
        return int(self._seed_rngs[i].integers(0, 2**63))

    def _reset_slot(self, i: int) -> None:
        state, pair = self.env.reset(self._next_seed(i))
        if len(self.states) <= i:
            self.states.append(state)
        else:
            self.states[i] = state
        self.obs_t[i] = pair.teacher
        self.obs_s[i] = pair.student
        self._returns[i] = 0.0

    def observations(self) -> tuple[np.ndarray, np.ndarray]:
        return self.obs_t.copy(), self.obs_s.copy()

    def step(self, actions: np.ndarray):
        """Advance every slot one tick; returns (rewards, dones, episode_infos).

        episode_infos lists (return, success) for episodes that ended this tick.
        The exposed observations are post-reset for finished slots.
        """
        rewards = np.empty(self.n_envs)
        dones = np.zeros(self.n_envs)
        finished: list[tuple[float, bool]] = []
        for i in range(self.n_envs):
            state, pair, reward, done = self.env.step(self.states[i], int(actions[i]))
            rewards[i] = reward
            self._returns[i] += reward
            if done:
                dones[i] = 1.0
                finished.append((self._returns[i], state.terminal == Terminal.SUCCESS))
                self._reset_slot(i)
            else:
                self.states[i] = state
                self.obs_t[i] = pair.teacher
                self.obs_s[i] = pair.student
        return rewards, dones, finished
