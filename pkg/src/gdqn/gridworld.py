"""Randomized-goal gridworld navigation.

The agent and the goal are re-randomized (distinct cells) every episode. Four
moves {left, right, up, down}; a move off the grid leaves the agent in place.
Reward +1 exactly when the agent reaches the goal, which also ends the
episode. Coordinates: x grows rightward, y grows downward, cells flatten
row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

GRID_ACTIONS = ("left", "right", "up", "down")
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class GridState:
    width: int
    height: int
    agent: tuple[int, int]
    goal: tuple[int, int]


def grid_reset(width: int, height: int, rng: np.random.Generator) -> GridState:
    """Uniform agent cell, then a uniform goal cell resampled until distinct."""
    if width < 2 or height < 2:
        raise ConfigError(f"grid must be at least 2x2, got {width}x{height}")
    n = width * height
    agent = int(rng.integers(n))
    goal = int(rng.integers(n))
    while goal == agent:
        goal = int(rng.integers(n))
    return GridState(
        width=width,
        height=height,
        agent=(agent % width, agent // width),
        goal=(goal % width, goal // width),
    )


def grid_step(state: GridState, action: int) -> tuple[GridState, float, bool]:
    """One move; returns (next state, reward, done)."""
    dx, dy = _MOVES[action]
    x, y = state.agent
    nx, ny = x + dx, y + dy
    if not (0 <= nx < state.width and 0 <= ny < state.height):
        nx, ny = x, y
    nxt = replace(state, agent=(nx, ny))
    done = nxt.agent == state.goal
    return nxt, (1.0 if done else 0.0), done


def grid_encode(state: GridState) -> tuple[np.ndarray, np.ndarray]:
    """One-hot agent cell and one-hot goal cell, each of length W*H."""
    n = state.width * state.height
    obs = np.zeros(n)
    goal = np.zeros(n)
    obs[state.agent[1] * state.width + state.agent[0]] = 1.0
    goal[state.goal[1] * state.width + state.goal[0]] = 1.0
    return obs, goal


def shortest_distance(state: GridState) -> int:
    """Manhattan distance from the agent to the goal."""
    return abs(state.agent[0] - state.goal[0]) + abs(state.agent[1] - state.goal[1])


class GridEnv:
    """Adapter giving the training loop a uniform reset/step/encode surface."""

    kind = "grid"
    obs_scale = 1.0
    goal_scale = 1.0

    def __init__(self, width: int, height: int):
        if width < 2 or height < 2:
            raise ConfigError(f"grid must be at least 2x2, got {width}x{height}")
        self.width = width
        self.height = height
        self.n_actions = len(GRID_ACTIONS)
        self.obs_dim = width * height
        self.goal_dim = width * height

    def reset(self, rng: np.random.Generator) -> GridState:
        return grid_reset(self.width, self.height, rng)

    def step(self, state: GridState, action: int, rng: np.random.Generator):
        nxt, reward, done = grid_step(state, action)
        info = {"cause": "goal"} if done else {}
        return nxt, reward, done, info

    def encode(self, state: GridState) -> tuple[np.ndarray, np.ndarray]:
        return grid_encode(state)

    def encode_raw(self, state: GridState) -> tuple[np.ndarray, np.ndarray]:
        n = state.width * state.height
        obs = np.zeros(n, dtype=np.uint8)
        goal = np.zeros(n, dtype=np.uint8)
        obs[state.agent[1] * state.width + state.agent[0]] = 1
        goal[state.goal[1] * state.width + state.goal[0]] = 1
        return obs, goal

    def final_stats(self, state: GridState) -> dict:
        return {}

    def episode_meta(self, state: GridState) -> dict:
        return {
            "goal_id": state.goal[1] * self.width + state.goal[0],
            "shortest": shortest_distance(state),
        }

    def eval_step_cap(self) -> int:
        # a greedy policy can livelock; measurement needs episodes to end
        return 4 * self.width * self.height
