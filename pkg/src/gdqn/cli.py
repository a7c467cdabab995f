"""Command-line entry points.

    gdqn train   --env {grid,stack} --agent {dqn,gdqn} [--shaping {none,or,dt}] ...
    gdqn eval    --checkpoint PATH --episodes K
    gdqn targets --blocks N --seed S --out FILE
    gdqn replay  --checkpoint PATH --target ID
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .agent import TEST_EPSILON, select_action
from .checkpoint import load_checkpoint
from .errors import ConfigError
from .harness import ExperimentConfig, build_env, run_experiment
from .stacking import (generate_targets, save_targets, stack_encode_raw,
                       stack_reset, stack_step)


def _cmd_train(args) -> int:
    cfg = ExperimentConfig(
        env=args.env, agent=args.agent, shaping=args.shaping,
        grid_size=args.grid_size, n_blocks=args.blocks, epochs=args.epochs,
        train_epoch_steps=args.train_steps, test_epoch_steps=args.test_steps,
        anneal_epochs=args.anneal_epochs, buffer_capacity=args.buffer,
        gamma=args.gamma, lr=args.lr, seed=args.seed,
        target_seed=args.target_seed, out_dir=args.out,
    )
    report = run_experiment(cfg)
    print(json.dumps({"best": report.best, "wall_clock_sec": report.wall_clock_sec},
                     indent=2))
    return 0


def _rebuild_from_checkpoint(path):
    net, sidecar = load_checkpoint(path)
    cfg_dict = sidecar.get("config", {})
    if not cfg_dict:
        raise ConfigError("checkpoint sidecar carries no experiment config")
    cfg = ExperimentConfig(**{
        f.name: cfg_dict[f.name]
        for f in dataclasses.fields(ExperimentConfig) if f.name in cfg_dict
    })
    env = build_env(cfg)
    expected = env.obs_dim + (env.goal_dim if cfg.agent == "gdqn" else 0)
    if net.layer_dims[0] != expected or net.layer_dims[-1] != env.n_actions:
        raise ConfigError(
            f"checkpoint dims {net.layer_dims} do not fit env "
            f"(in {expected}, out {env.n_actions})"
        )
    return net, cfg, env


def _cmd_eval(args) -> int:
    net, cfg, env = _rebuild_from_checkpoint(args.checkpoint)
    goal_conditioned = cfg.agent == "gdqn"
    rng = np.random.default_rng(args.seed)
    cap = env.eval_step_cap()
    results = []
    for _ in range(args.episodes):
        state = env.reset(rng)
        meta = env.episode_meta(state)
        steps = 0
        done = False
        info = {}
        while not done and steps < cap:
            obs, goal = env.encode(state)
            if not goal_conditioned:
                goal = np.zeros(0)
            action = select_action(net, obs, goal, TEST_EPSILON, rng)
            state, _, done, info = env.step(state, action, rng)
            steps += 1
        if not done:
            info = dict(env.final_stats(state))
            info["cause"] = "step_cap"
        results.append((steps, meta, info))

    if cfg.env == "grid":
        optimal = sum(
            1 for steps, meta, info in results
            if info.get("cause") == "goal" and steps == meta["shortest"]
        )
        print(json.dumps({"episodes": len(results),
                          "success_ratio": optimal / len(results)}, indent=2))
    else:
        overlaps = [info.get("overlap", 0.0) for _, _, info in results]
        matched = sum(1 for _, _, info in results if info.get("matched"))
        print(json.dumps({"episodes": len(results),
                          "or_all": float(np.mean(overlaps)),
                          "sr": matched / len(results)}, indent=2))
    return 0


def _cmd_targets(args) -> int:
    targets = generate_targets(args.blocks, args.width, args.height,
                               rng=np.random.default_rng(args.seed))
    save_targets(args.out, targets, args.width, args.height)
    print(f"wrote {len(targets)} targets to {args.out}")
    return 0


def _frame(scene) -> str:
    obs, _ = stack_encode_raw(scene)
    grid = obs.reshape(scene.height, scene.width)
    glyph = {0: ".", 1: "#", 2: "*"}
    return "\n".join("".join(glyph[int(v)] for v in row) for row in grid)


def _cmd_replay(args) -> int:
    net, cfg, env = _rebuild_from_checkpoint(args.checkpoint)
    if cfg.env != "stack":
        raise ConfigError("replay is a stacking command")
    target = next((t for t in env.targets if t.id == args.target), None)
    if target is None:
        raise ConfigError(f"no target with id {args.target}")
    rng = np.random.default_rng(args.seed)
    scene = stack_reset(env.width, env.height, target, rng)
    goal_conditioned = cfg.agent == "gdqn"
    print(f"target {target.id} ({target.n_blocks} blocks)")
    print(_frame(scene))
    step = 0
    while scene.outcome is None and step < env.eval_step_cap():
        obs, goal = env.encode(scene)
        if not goal_conditioned:
            goal = np.zeros(0)
        action = select_action(net, obs, goal, 0.0, rng)
        scene, outcome = stack_step(scene, action, rng)
        step += 1
        print(f"\nstep {step}: action={['left', 'right', 'down'][action]} "
              f"outcome={outcome}")
        print(_frame(scene))
    print(f"\nepisode ended: {scene.outcome or 'step cap reached'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gdqn",
                                     description="goal-conditioned DQN lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--env", choices=["grid", "stack"], required=True)
    p_train.add_argument("--agent", choices=["dqn", "gdqn"], default="gdqn")
    p_train.add_argument("--shaping", choices=["none", "or", "dt"], default="none")
    p_train.add_argument("--grid-size", type=int, default=5)
    p_train.add_argument("--blocks", type=int, choices=[2, 3, 4], default=2)
    p_train.add_argument("--epochs", type=int, default=100)
    p_train.add_argument("--train-steps", type=int, default=None)
    p_train.add_argument("--test-steps", type=int, default=None)
    p_train.add_argument("--anneal-epochs", type=int, default=20)
    p_train.add_argument("--buffer", type=int, default=None)
    p_train.add_argument("--gamma", type=float, default=0.95)
    p_train.add_argument("--lr", type=float, default=2.5e-4)
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--target-seed", type=int, default=7)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=_cmd_eval)

    p_targets = sub.add_parser("targets", help="emit a JSON target set")
    p_targets.add_argument("--blocks", type=int, required=True)
    p_targets.add_argument("--seed", type=int, default=7)
    p_targets.add_argument("--width", type=int, default=20)
    p_targets.add_argument("--height", type=int, default=20)
    p_targets.add_argument("--out", required=True)
    p_targets.set_defaults(func=_cmd_targets)

    p_replay = sub.add_parser("replay", help="print a greedy episode as text frames")
    p_replay.add_argument("--checkpoint", required=True)
    p_replay.add_argument("--target", type=int, required=True)
    p_replay.add_argument("--seed", type=int, default=0)
    p_replay.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
