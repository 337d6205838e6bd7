"""Deterministic toy continuous-control environments.

Two families stand in for locomotion and goal-reaching benchmarks at desk
scale: a 1-D corridor rewarding forward velocity and a 2-D point maze with
an interior wall and a goal region (sparse or dense reward). Dynamics are
semi-implicit Euler with friction and per-dimension velocity clamping, so
single steps can be checked by hand:

    v' = clip((1 - friction) * v + dt * a, -v_max, v_max)
    x' = x + dt * v'

Wall hits zero the normal velocity component and project the position back
to the surface. Scripted behavior policies (expert / medium / random) are
included for dataset generation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DT = 0.1
FRICTION = 0.05
V_MAX = 5.0
WALL_EPS = 1e-9


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    action_dim: int
    max_episode_steps: int
    reward_kind: str  # "sparse" | "dense"
    action_low: float = -1.0
    action_high: float = 1.0

    def __post_init__(self):
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("dims must be >= 1")
        if not (np.isfinite(self.action_low) and np.isfinite(self.action_high)):
            raise ValueError("action bounds must be finite")


@dataclass(frozen=True)
class Wall:
    """Axis-aligned segment. orientation 'v': x == coord for span[0] <= y <=
    span[1]; orientation 'h': y == coord over an x span."""

    orientation: str
    coord: float
    lo: float
    hi: float


class _PhysicsEnv:
    """Shared integrator + episode bookkeeping."""

    spec: EnvSpec

    def __init__(self):
        self._state: np.ndarray | None = None
        self._t = 0

    def reset(self, seed: int) -> np.ndarray:
        rng = np.random.Generator(np.random.Philox(key=seed))
        self._state = self._initial_state(rng)
        self._t = 0
        return self._state.copy()

    @property
    def state(self) -> np.ndarray:
        if self._state is None:
            raise RuntimeError("reset() before reading state")
        return self._state.copy()

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        if self._state is None:
            raise RuntimeError("reset() before step()")
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.action_dim)
        if not np.all(np.isfinite(action)):
            raise ValueError("non-finite action")
        self._t += 1
        next_state, reward, goal = self._transition(self._state, action)
        truncated = self._t >= self.spec.max_episode_steps
        terminal = goal and self.spec.reward_kind == "sparse"
        self._state = next_state
        done = terminal or truncated
        return next_state.copy(), reward, done, {
            "goal": goal,
            "terminal": terminal,
            "truncated": truncated and not terminal,
        }

    # subclasses
    def _initial_state(self, rng) -> np.ndarray:
        raise NotImplementedError

    def _transition(self, state, action):
        raise NotImplementedError


class CorridorEnv(_PhysicsEnv):
    """state = [x, v]; scalar acceleration; dense reward = new velocity."""

    START_LOW, START_HIGH = -0.5, 0.5

    def __init__(self):
        super().__init__()
        self.spec = EnvSpec("corridor", state_dim=2, action_dim=1,
                            max_episode_steps=300, reward_kind="dense")

    def _initial_state(self, rng):
        return np.array([rng.uniform(self.START_LOW, self.START_HIGH), 0.0])

    def _transition(self, state, action):
        a = np.clip(action[0], -1.0, 1.0)
        v = np.clip((1.0 - FRICTION) * state[1] + DT * a, -V_MAX, V_MAX)
        x = state[0] + DT * v
        return np.array([x, v]), float(v), False


class PointMazeEnv(_PhysicsEnv):
    """state = [x, y, vx, vy] in a 4x4 box with an interior wall.

    The wall rises from the bottom edge at x=2, forcing a detour above its
    top to move between the left and right halves. Sparse reward: +1 on
    entering the goal disc, which ends the episode. Dense reward: negative
    distance to the goal every step, episode runs to the step limit.
    """

    BOX = 4.0
    GOAL = np.array([3.5, 3.5])
    GOAL_RADIUS = 0.5
    START_LOW = np.array([0.4, 0.4])
    START_HIGH = np.array([1.0, 1.0])
    WALLS = (Wall("v", 2.0, 0.0, 2.5),)

    def __init__(self, reward_kind: str):
        super().__init__()
        if reward_kind not in ("sparse", "dense"):
            raise ValueError(f"unknown reward kind {reward_kind!r}")
        self.spec = EnvSpec(f"pointmaze-{reward_kind}", state_dim=4, action_dim=2,
                            max_episode_steps=300, reward_kind=reward_kind)

    def _initial_state(self, rng):
        pos = rng.uniform(self.START_LOW, self.START_HIGH)
        return np.array([pos[0], pos[1], 0.0, 0.0])

    def _transition(self, state, action):
        a = np.clip(action, -1.0, 1.0)
        old = state[:2]
        v = np.clip((1.0 - FRICTION) * state[2:] + DT * a, -V_MAX, V_MAX)
        new = old + DT * v
        new, v = self._collide(old, new, v)
        goal = (np.linalg.norm(new - self.GOAL) <= self.GOAL_RADIUS
                or np.linalg.norm(old - self.GOAL) <= self.GOAL_RADIUS)
        if self.spec.reward_kind == "sparse":
            reward = 1.0 if goal else 0.0
        else:
            reward = -float(np.linalg.norm(new - self.GOAL))
        return np.concatenate([new, v]), reward, goal

    def _collide(self, old, new, v):
        new = new.copy()
        v = v.copy()
        for _ in range(2):  # second pass resolves corner interactions
            for wall in self.WALLS:
                axis = 0 if wall.orientation == "v" else 1
                other = 1 - axis
                d_old = old[axis] - wall.coord
                d_new = new[axis] - wall.coord
                if d_old == 0.0 or d_new * d_old >= 0.0:
                    continue
                frac = d_old / (old[axis] - new[axis])
                cross = old[other] + (new[other] - old[other]) * frac
                if wall.lo <= cross <= wall.hi:
                    new[axis] = wall.coord + np.sign(d_old) * WALL_EPS
                    v[axis] = 0.0
            for axis in range(2):
                if new[axis] < 0.0:
                    new[axis] = 0.0
                    v[axis] = max(v[axis], 0.0)
                elif new[axis] > self.BOX:
                    new[axis] = self.BOX
                    v[axis] = min(v[axis], 0.0)
        return new, v


ENV_NAMES = ("pointmaze-sparse", "pointmaze-dense", "corridor")


def make_env(name: str) -> _PhysicsEnv:
    if name == "corridor":
        return CorridorEnv()
    if name == "pointmaze-sparse":
        return PointMazeEnv("sparse")
    if name == "pointmaze-dense":
        return PointMazeEnv("dense")
    raise ValueError(f"unknown environment {name!r}; choose from {ENV_NAMES}")


class ScriptedPolicy:
    """Dataset-generation controllers.

    expert: proportional controller (gain 1.0) toward the goal position, or
    toward v_max in the corridor, clipped to the action bounds.
    medium: expert with N(0, 0.5) action noise and a 20% chance per step of
    a uniformly random action.
    random: uniform actions.
    """

    KINDS = ("expert", "medium", "random")
    NOISE_STD = 0.5
    RANDOM_FRACTION = 0.2

    def __init__(self, kind: str, seed: int = 0):
        if kind not in self.KINDS:
            raise ValueError(f"unknown policy kind {kind!r}; choose from {self.KINDS}")
        self.kind = kind
        self.rng = np.random.default_rng(seed)

    def __call__(self, env: _PhysicsEnv, state: np.ndarray) -> np.ndarray:
        dim = env.spec.action_dim
        if self.kind == "random":
            return self.rng.uniform(-1.0, 1.0, size=dim)
        a = self._expert(env, state)
        if self.kind == "medium":
            if self.rng.random() < self.RANDOM_FRACTION:
                return self.rng.uniform(-1.0, 1.0, size=dim)
            a = a + self.rng.normal(0.0, self.NOISE_STD, size=dim)
        return np.clip(a, -1.0, 1.0)

    @staticmethod
    def _expert(env, state):
        if isinstance(env, CorridorEnv):
            return np.array([V_MAX - state[1]])
        return PointMazeEnv.GOAL - np.asarray(state)[:2]
