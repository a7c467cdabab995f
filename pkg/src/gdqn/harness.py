"""Experiment runner: configuration, seeding, metric aggregation, persistence.

A run alternates train and test epochs for a fixed number of rounds, logs one
CSV row per episode plus per-epoch aggregate rows, keeps a checkpoint of the
best test epoch, and emits a JSON report. Everything downstream of the config
(seed included) is deterministic.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import AgentConfig, EpochLog, RngBundle, make_agent, run_epoch
from .checkpoint import save_checkpoint
from .errors import ConfigError, MetricError
from .gridworld import GridEnv
from .stacking import StackEnv, generate_targets, save_targets

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = [
    "row", "epoch", "mode", "episode", "steps", "cause", "reward", "goal",
    "optimal", "overlap", "matched",
    "success_ratio", "or_all", "or_finished", "sr", "sr_finished", "episodes",
]

# a test epoch needs this many completed episodes before its ratio may be
# reported as the run's best; otherwise ratios pool across all test epochs
MIN_EPISODES_FOR_BEST = 5

SHAPING_ALIASES = {"none": "none", "or": "overlap", "dt": "distance",
                   "overlap": "overlap", "distance": "distance"}


@dataclass
class ExperimentConfig:
    env: str = "grid"              # grid | stack
    agent: str = "gdqn"            # dqn | gdqn
    shaping: str = "none"          # none | or | dt
    grid_size: int = 5
    n_blocks: int = 2
    scene_size: int = 20
    epochs: int = 100
    train_epoch_steps: int | None = None
    test_epoch_steps: int | None = None
    anneal_epochs: int = 20
    buffer_capacity: int | None = None
    gamma: float = 0.95
    batch_size: int = 32
    target_sync_period: int = 1000
    lr: float = 2.5e-4
    seed: int = 0
    target_seed: int = 7
    out_dir: str | None = None

    def __post_init__(self):
        if self.env not in ("grid", "stack"):
            raise ConfigError(f"env must be grid or stack, got {self.env!r}")
        if self.agent not in ("dqn", "gdqn"):
            raise ConfigError(f"agent must be dqn or gdqn, got {self.agent!r}")
        if self.shaping not in SHAPING_ALIASES:
            raise ConfigError(f"unknown shaping {self.shaping!r}")
        if self.env == "grid" and SHAPING_ALIASES[self.shaping] != "none":
            raise ConfigError("reward shaping only applies to the stacking env")
        if self.train_epoch_steps is None:
            if self.env == "grid":
                self.train_epoch_steps = 1000 if self.grid_size <= 5 else 3000
            else:
                self.train_epoch_steps = 10000
        if self.test_epoch_steps is None:
            self.test_epoch_steps = 100 if self.env == "grid" else 1000
        if self.buffer_capacity is None:
            # buffer sized to the annealing length
            self.buffer_capacity = self.anneal_epochs * self.train_epoch_steps

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            gamma=self.gamma,
            batch_size=self.batch_size,
            target_sync_period=self.target_sync_period,
            train_epoch_steps=self.train_epoch_steps,
            test_epoch_steps=self.test_epoch_steps,
            epochs=self.epochs,
            goal_conditioned=(self.agent == "gdqn"),
            shaping=SHAPING_ALIASES[self.shaping],
            buffer_capacity=self.buffer_capacity,
            anneal_steps=self.anneal_epochs * self.train_epoch_steps,
            lr=self.lr,
        )


@dataclass
class StackMetrics:
    or_all: float
    or_finished: float | None
    sr: float                     # exact matches over all ended episodes
    sr_finished: float | None     # exact matches over finished episodes only


@dataclass
class RunReport:
    config: dict
    epochs: list[dict] = field(default_factory=list)
    best: dict = field(default_factory=dict)
    wall_clock_sec: float = 0.0
    csv_path: str | None = None
    checkpoint_path: str | None = None


def success_ratio(records) -> float:
    """Fraction of completed test episodes that reached the goal in exactly
    the shortest distance."""
    done = [r for r in records if r.cause != "truncated"]
    if not done:
        raise MetricError("no completed episodes")
    return sum(1 for r in done if r.optimal) / len(done)


def stacking_metrics(records) -> StackMetrics:
    """Average overlap ratio and success rate over episodes that ended.

    `or_all`/`sr` average over every ended episode (collisions and collapses
    score their partial overlap and count as failures); the `_finished`
    variants restrict to episodes that placed all their blocks, and are None
    when there are none. Both denominators are logged because the two
    readings diverge exactly when agents rarely finish.
    """
    done = [r for r in records if r.cause != "truncated"]
    if not done:
        raise MetricError("no completed episodes")
    or_all = float(np.mean([r.overlap for r in done]))
    finished = [r for r in done if r.cause == "finished"]
    or_finished = float(np.mean([r.overlap for r in finished])) if finished else None
    matches = sum(1 for r in done if r.matched)
    sr = matches / len(done)
    sr_finished = matches / len(finished) if finished else None
    return StackMetrics(or_all=or_all, or_finished=or_finished, sr=sr,
                        sr_finished=sr_finished)


def build_env(cfg: ExperimentConfig):
    if cfg.env == "grid":
        return GridEnv(cfg.grid_size, cfg.grid_size)
    targets = generate_targets(
        cfg.n_blocks, cfg.scene_size, cfg.scene_size,
        rng=np.random.default_rng(cfg.target_seed),
    )
    return StackEnv(targets, cfg.scene_size, cfg.scene_size,
                    shaping=SHAPING_ALIASES[cfg.shaping])


def _epoch_metrics(cfg: ExperimentConfig, log: EpochLog) -> dict:
    row = {"epoch": log.epoch, "episodes": len(log.completed())}
    if cfg.env == "grid":
        try:
            row["success_ratio"] = success_ratio(log.records)
        except MetricError:
            row["success_ratio"] = None
    else:
        try:
            m = stacking_metrics(log.records)
            row.update(or_all=m.or_all, or_finished=m.or_finished, sr=m.sr,
                       sr_finished=m.sr_finished)
        except MetricError:
            row.update(or_all=None, or_finished=None, sr=None,
                       sr_finished=None)
    return row


def _metric_key(cfg: ExperimentConfig, row: dict):
    if cfg.env == "grid":
        v = row.get("success_ratio")
        return (-1.0,) if v is None else (v,)
    sr, or_all = row.get("sr"), row.get("or_all")
    if sr is None:
        return (-1.0, -1.0)
    return (sr, or_all)


def _pooled_metrics(cfg: ExperimentConfig, records) -> dict:
    row = {"epoch": None, "pooled": True, "episodes": len(records)}
    if not records:
        if cfg.env == "grid":
            row["success_ratio"] = None
        else:
            row.update(or_all=None, or_finished=None, sr=None,
                       sr_finished=None)
        return row
    if cfg.env == "grid":
        row["success_ratio"] = success_ratio(records)
    else:
        m = stacking_metrics(records)
        row.update(or_all=m.or_all, or_finished=m.or_finished, sr=m.sr,
                   sr_finished=m.sr_finished)
    return row


def _episode_rows(log: EpochLog):
    for r in log.records:
        yield {
            "row": "episode", "epoch": log.epoch, "mode": log.mode,
            "episode": r.index, "steps": r.steps, "cause": r.cause,
            "reward": r.reward, "goal": r.goal_id,
            "optimal": r.optimal, "overlap": r.overlap, "matched": r.matched,
        }


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Alternate train/test epochs, logging and checkpointing the best agent."""
    t0 = time.monotonic()
    out = Path(cfg.out_dir) if cfg.out_dir else None
    writer = None
    csv_file = None
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            csv_file = open(out / "episodes.csv", "w", newline="")
        except OSError as e:
            raise IOError(f"cannot write to output dir {out}: {e}") from e
        writer = csv.DictWriter(csv_file, fieldnames=CSV_COLUMNS, restval="")
        writer.writeheader()

    env = build_env(cfg)
    ss = np.random.SeedSequence(cfg.seed)
    ss_net, ss_run = ss.spawn(2)
    agent = make_agent(env, cfg.agent_config(), np.random.default_rng(ss_net))
    rngs = RngBundle.from_seed_sequence(ss_run)

    report = RunReport(config=dataclasses.asdict(cfg))
    best_key = None          # over epochs with enough completed episodes
    best_net = None
    fallback_key = None      # over all epochs, used only if none qualify
    fallback_net = None
    pooled: list = []        # completed-episode records across all test epochs

    try:
        for epoch in range(cfg.epochs):
            train_log = run_epoch(env, agent, "train", rngs, epoch)
            test_log = run_epoch(env, agent, "test", rngs, epoch)
            metrics = _epoch_metrics(cfg, test_log)
            report.epochs.append(metrics)
            pooled.extend(test_log.completed())
            if writer is not None:
                for row in _episode_rows(train_log):
                    writer.writerow(row)
                for row in _episode_rows(test_log):
                    writer.writerow(row)
                agg = {"row": "epoch", "epoch": epoch, "mode": "test"}
                agg.update({k: v for k, v in metrics.items() if k != "epoch"})
                writer.writerow(agg)
            key = _metric_key(cfg, metrics)
            if metrics["episodes"] >= MIN_EPISODES_FOR_BEST and \
                    (best_key is None or key > best_key):
                best_key = key
                best_net = agent.net.copy()
                report.best = dict(metrics)
            if fallback_key is None or key > fallback_key:
                fallback_key = key
                fallback_net = agent.net.copy()
    finally:
        if csv_file is not None:
            csv_file.close()

    if best_net is None:
        # no epoch had a usable sample size: report ratios pooled over every
        # completed test episode instead of a cherry-picked tiny epoch
        best_net = fallback_net
        report.best = _pooled_metrics(cfg, pooled)

    report.wall_clock_sec = time.monotonic() - t0
    if out is not None:
        report.csv_path = str(out / "episodes.csv")
        if best_net is not None:
            ckpt = out / "best.ckpt"
            save_checkpoint(ckpt, best_net, config=report.config)
            report.checkpoint_path = str(ckpt)
        if cfg.env == "stack":
            save_targets(out / "targets.json", env.targets, env.width, env.height)
        payload = dataclasses.asdict(report)
        payload["csv_schema_version"] = CSV_SCHEMA_VERSION
        (out / "report.json").write_text(json.dumps(payload, indent=2))
    return report
