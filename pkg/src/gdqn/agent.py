"""Agent machinery shared by DQN and GDQN: replay, exploration, TD targets,
and the train/test epoch loop.

One decision is made per environment step (no action repeat). In train mode
every step pushes a transition and, once the buffer holds a batch, applies
one gradient update; the frozen target net is refreshed on a fixed step
period. In test mode exploration is pinned at 0.05 and nothing is learned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .nets import (DenseNet, OptimizerState, apply_update, forward,
                   forward_batch, init_net, q_loss_and_grad, sync_target)

EMPTY_GOAL = np.zeros(0)
EMPTY_GOAL_U8 = np.zeros(0, dtype=np.uint8)

TEST_EPSILON = 0.05


@dataclass
class Transition:
    """One (s, g, a, r, s', terminal) replay record.

    Observation and goal vectors are stored in the environment's compact
    integer encoding; `obs_scale`/`goal_scale` on the env recover the float
    encoding at batch time. `g` is empty for plain DQN.
    """

    s: np.ndarray
    g: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions, sampled uniformly."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ConfigError("replay capacity must be >= 1")
        self.capacity = capacity
        self._storage: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._storage)

    def push(self, t: Transition) -> None:
        if len(self._storage) < self.capacity:
            self._storage.append(t)
        else:
            self._storage[self._cursor] = t
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, k: int, rng: np.random.Generator) -> list[Transition]:
        """k independent uniform draws with replacement."""
        if not self._storage:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._storage), size=k)
        return [self._storage[i] for i in idx]

    def contents_in_order(self) -> list[Transition]:
        """Oldest to newest; used by the FIFO invariant checks."""
        if len(self._storage) < self.capacity:
            return list(self._storage)
        return self._storage[self._cursor:] + self._storage[: self._cursor]


@dataclass(frozen=True)
class EpsilonSchedule:
    start: float = 1.0
    end: float = 0.1
    anneal_steps: int = 1


def epsilon_at(sched: EpsilonSchedule, step: int) -> float:
    """Piecewise-linear anneal: start at step 0, end at and after anneal_steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step >= sched.anneal_steps:
        return sched.end
    frac = step / sched.anneal_steps
    return sched.start + (sched.end - sched.start) * frac


@dataclass
class AgentConfig:
    gamma: float = 0.95
    batch_size: int = 32
    target_sync_period: int = 1000
    train_epoch_steps: int = 1000
    test_epoch_steps: int = 100
    epochs: int = 100
    goal_conditioned: bool = True
    shaping: str = "none"  # none | overlap | distance (stacking only)
    hidden_dims: tuple[int, ...] = (64, 64)
    buffer_capacity: int = 20000
    anneal_steps: int = 20000
    clip_td_error: bool = False
    opt_rule: str = "rmsprop"
    lr: float = 2.5e-4

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must be in [0, 1]")
        for name in ("batch_size", "target_sync_period", "train_epoch_steps",
                     "test_epoch_steps", "epochs", "buffer_capacity", "anneal_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def encode_input(obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
    """Concatenate the goal onto the observation (goal may be empty for DQN)."""
    if goal.size == 0:
        return np.asarray(obs, dtype=np.float64)
    return np.concatenate([obs, goal]).astype(np.float64)


def select_action(net: DenseNet, obs: np.ndarray, goal: np.ndarray,
                  eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the goal-conditioned Q-values.

    Greedy ties break toward the lowest action index.
    """
    n_actions = net.layer_dims[-1]
    if rng.random() < eps:
        return int(rng.integers(n_actions))
    q = forward(net, encode_input(obs, goal))
    return int(np.argmax(q))


def batch_inputs(batch: list[Transition], obs_scale: float = 1.0,
                 goal_scale: float = 1.0, use_next: bool = False) -> np.ndarray:
    n_obs = batch[0].s.shape[0]
    n_goal = batch[0].g.shape[0]
    out = np.empty((len(batch), n_obs + n_goal))
    for i, t in enumerate(batch):
        out[i, :n_obs] = t.s_next if use_next else t.s
        if n_goal:
            out[i, n_obs:] = t.g
    if obs_scale != 1.0:
        out[:, :n_obs] *= obs_scale
    if goal_scale != 1.0 and n_goal:
        out[:, n_obs:] *= goal_scale
    return out


def td_targets(batch: list[Transition], target_net: DenseNet, gamma: float,
               obs_scale: float = 1.0, goal_scale: float = 1.0) -> np.ndarray:
    """r for terminal transitions, else r + gamma * max_a' Q(s', g, a'; theta-).

    Terminal transitions never read s_next: their bootstrap term is masked to
    zero, so perturbing a terminal s_next cannot change its target.
    """
    if not batch:
        raise ValueError("td_targets needs a non-empty batch")
    targets = np.array([t.r for t in batch], dtype=np.float64)
    live = np.array([not t.terminal for t in batch])
    if live.any():
        nxt = batch_inputs(batch, obs_scale, goal_scale, use_next=True)
        max_q = forward_batch(target_net, nxt).max(axis=1)
        targets[live] += gamma * max_q[live]
    return targets


# ---------------------------------------------------------------------------
# agent + epoch loop
# ---------------------------------------------------------------------------

@dataclass
class Agent:
    net: DenseNet
    target_net: DenseNet
    opt: OptimizerState
    buffer: ReplayBuffer
    schedule: EpsilonSchedule
    config: AgentConfig
    train_steps: int = 0


def make_agent(env, config: AgentConfig, rng_net: np.random.Generator) -> Agent:
    input_dim = env.obs_dim + (env.goal_dim if config.goal_conditioned else 0)
    net = init_net([input_dim, *config.hidden_dims, env.n_actions], rng_net)
    return Agent(
        net=net,
        target_net=sync_target(net),
        opt=OptimizerState.for_net(net, rule=config.opt_rule, lr=config.lr),
        buffer=ReplayBuffer(config.buffer_capacity),
        schedule=EpsilonSchedule(1.0, 0.1, config.anneal_steps),
        config=config,
    )


@dataclass
class RngBundle:
    """Per-concern generator streams so components can be ablated independently."""

    env: np.random.Generator
    explore: np.random.Generator
    replay: np.random.Generator

    @classmethod
    def from_seed_sequence(cls, ss: np.random.SeedSequence) -> "RngBundle":
        children = ss.spawn(3)
        return cls(*(np.random.default_rng(c) for c in children))


@dataclass
class EpisodeRecord:
    epoch: int
    index: int
    steps: int
    cause: str
    reward: float
    goal_id: int
    optimal: bool | None = None   # grid: reached in exactly the shortest distance
    overlap: float | None = None  # stack: end placed raster vs target
    matched: bool | None = None   # stack: exact reproduction


@dataclass
class EpochLog:
    epoch: int
    mode: str
    steps_taken: int
    records: list[EpisodeRecord] = field(default_factory=list)

    def completed(self) -> list[EpisodeRecord]:
        """Episodes that reached a terminal outcome (epoch truncation excluded)."""
        return [r for r in self.records if r.cause != "truncated"]


def run_epoch(env, agent: Agent, mode: str, rngs: RngBundle, epoch: int = 0) -> EpochLog:
    """Run exactly one epoch's budget of environment steps.

    Episodes reset on termination and roll over within the epoch; the final
    partial episode is logged with cause "truncated". Test mode applies the
    environment's evaluation step cap (cause "step_cap", counted as failure).
    """
    if mode not in ("train", "test"):
        raise ConfigError(f"mode must be 'train' or 'test', got {mode!r}")
    cfg = agent.config
    training = mode == "train"
    budget = cfg.train_epoch_steps if training else cfg.test_epoch_steps
    obs_scale = getattr(env, "obs_scale", 1.0)
    goal_scale = getattr(env, "goal_scale", 1.0)
    step_cap = env.eval_step_cap() if not training else None

    log = EpochLog(epoch=epoch, mode=mode, steps_taken=budget)
    state = None
    meta = {}
    ep_steps = 0
    ep_reward = 0.0
    ep_index = 0

    for _ in range(budget):
        if state is None:
            state = env.reset(rngs.env)
            meta = env.episode_meta(state)
            ep_steps = 0
            ep_reward = 0.0

        obs, goal = env.encode(state)
        if not cfg.goal_conditioned:
            goal = EMPTY_GOAL
        eps = epsilon_at(agent.schedule, agent.train_steps) if training else TEST_EPSILON
        action = select_action(agent.net, obs, goal, eps, rngs.explore)

        nxt, reward, done, info = env.step(state, action, rngs.env)
        ep_steps += 1
        ep_reward += reward
        cause = info.get("cause")

        if training:
            raw_obs, raw_goal = env.encode_raw(state)
            raw_obs_next, _ = env.encode_raw(nxt)
            agent.buffer.push(Transition(
                s=raw_obs,
                g=raw_goal if cfg.goal_conditioned else EMPTY_GOAL_U8,
                a=action,
                r=reward,
                s_next=raw_obs_next,
                terminal=done,
            ))
            if len(agent.buffer) >= cfg.batch_size:
                batch = agent.buffer.sample(cfg.batch_size, rngs.replay)
                targets = td_targets(batch, agent.target_net, cfg.gamma,
                                     obs_scale, goal_scale)
                inputs = batch_inputs(batch, obs_scale, goal_scale)
                actions = np.array([t.a for t in batch])
                _, grads = q_loss_and_grad(agent.net, inputs, actions, targets,
                                           clip_td_error=cfg.clip_td_error)
                apply_update(agent.net, grads, agent.opt)
            agent.train_steps += 1
            if agent.train_steps % cfg.target_sync_period == 0:
                agent.target_net = sync_target(agent.net)

        if not done and step_cap is not None and ep_steps >= step_cap:
            done = True
            cause = "step_cap"
            info = dict(info)
            info.update(env.final_stats(nxt))

        if done:
            log.records.append(EpisodeRecord(
                epoch=epoch,
                index=ep_index,
                steps=ep_steps,
                cause=cause,
                reward=ep_reward,
                goal_id=meta.get("goal_id", -1),
                optimal=(cause == "goal" and ep_steps == meta["shortest"])
                if "shortest" in meta else None,
                overlap=info.get("overlap"),
                matched=info.get("matched"),
            ))
            ep_index += 1
            state = None
        else:
            state = nxt

    if state is not None:
        stats = env.final_stats(state) if hasattr(env, "final_stats") else {}
        log.records.append(EpisodeRecord(
            epoch=epoch,
            index=ep_index,
            steps=ep_steps,
            cause="truncated",
            reward=ep_reward,
            goal_id=meta.get("goal_id", -1),
            optimal=None,
            overlap=stats.get("overlap"),
            matched=None,
        ))
    return log
