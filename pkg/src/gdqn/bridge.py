"""Line-delimited JSON bridge exposing environments and checkpoint inference.

Run as `python -m gdqn.bridge`. Each request is one JSON object per line on
stdin; each response is one JSON object per line on stdout:

    {"id": 1, "op": "make_env", "kind": "grid", "params": {"width": 5, "height": 5, "seed": 3}}
    {"id": 1, "ok": true, "env": 0, "n_actions": 4, ...}

Environments are held behind integer handles; one episode stream per handle.
Rasters cross the boundary as flat 8-bit arrays with explicit (width, height).
Observation/goal encodings cross as float arrays; reward/done as scalars.
Errors come back as {"ok": false, "error": {"type", "message"}}; the handle
stays usable unless the error invalidated it.

Ops: ping, make_env, reset, step, render, trace, close,
     make_net, load_net, save_net, greedy_action, argmax_batch.
"""

from __future__ import annotations

import json
import sys

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, StateError
from .gridworld import GridEnv
from .nets import forward, init_net
from .stacking import StackEnv, generate_targets


class _EnvHandle:
    def __init__(self, env, seed):
        self.env = env
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.done = True

    def reset(self):
        self.state = self.env.reset(self.rng)
        self.done = False
        return self._observe(0.0, {"goal_id": self.env.episode_meta(self.state).get("goal_id")})

    def step(self, action):
        if self.done or self.state is None:
            raise StateError("step on a finished episode; call reset first")
        n = self.env.n_actions
        if not isinstance(action, int) or not 0 <= action < n:
            raise ConfigError(f"action must be an integer in [0, {n})")
        self.state, reward, done, info = self.env.step(self.state, action, self.rng)
        self.done = done
        payload = self._observe(reward, {k: v for k, v in info.items() if v is not None})
        payload["done"] = done
        return payload

    def _observe(self, reward, info):
        obs, goal = self.env.encode(self.state)
        return {
            "obs": obs.tolist(),
            "goal": goal.tolist(),
            "reward": float(reward),
            "done": self.done,
            "info": info,
        }

    def render(self):
        if self.env.kind == "stack":
            from .stacking import render as render_scene
            cells = render_scene(self.state) if self.state is not None else \
                np.zeros((self.env.height, self.env.width), dtype=np.uint8)
        else:
            cells = np.zeros((self.env.height, self.env.width), dtype=np.uint8)
            if self.state is not None:
                ax, ay = self.state.agent
                gx, gy = self.state.goal
                cells[ay, ax] = 1
                cells[gy, gx] = 2
        return {
            "width": int(cells.shape[1]),
            "height": int(cells.shape[0]),
            "cells": [int(v) for v in cells.reshape(-1)],
        }


def _build_env(kind, params):
    params = dict(params or {})
    if kind == "grid":
        width = int(params.get("width", params.get("size", 5)))
        height = int(params.get("height", params.get("size", 5)))
        return GridEnv(width, height)
    if kind == "stack":
        from .harness import SHAPING_ALIASES
        n_blocks = int(params.get("n_blocks", 2))
        width = int(params.get("width", 20))
        height = int(params.get("height", 20))
        target_seed = int(params.get("target_seed", 7))
        shaping = params.get("shaping", "none")
        if shaping not in SHAPING_ALIASES:
            raise ConfigError(f"unknown shaping mode: {shaping!r}")
        targets = generate_targets(n_blocks, width, height,
                                   rng=np.random.default_rng(target_seed))
        return StackEnv(targets, width, height, shaping=SHAPING_ALIASES[shaping])
    raise ConfigError(f"unknown env kind: {kind!r}")


class Bridge:
    """Request dispatcher; one instance per connection."""

    def __init__(self):
        self._envs = {}
        self._nets = {}
        self._next = 0

    def _fresh_id(self):
        self._next += 1
        return self._next - 1

    def handle(self, request: dict) -> dict:
        op = request.get("op")
        fn = getattr(self, f"op_{op}", None)
        if fn is None:
            raise ConfigError(f"unknown op: {op!r}")
        return fn(request)

    def _env(self, request) -> _EnvHandle:
        handle = request.get("env")
        if handle not in self._envs:
            raise ConfigError(f"no such env handle: {handle}")
        return self._envs[handle]

    def _net(self, request):
        handle = request.get("net")
        if handle not in self._nets:
            raise ConfigError(f"no such net handle: {handle}")
        return self._nets[handle]

    def op_ping(self, request):
        return {}

    def op_make_env(self, request):
        kind = request.get("kind")
        params = request.get("params", {})
        env = _build_env(kind, params)
        handle = self._fresh_id()
        self._envs[handle] = _EnvHandle(env, int(params.get("seed", 0)))
        return {
            "env": handle,
            "kind": kind,
            "n_actions": env.n_actions,
            "obs_dim": env.obs_dim,
            "goal_dim": env.goal_dim,
            "width": env.width,
            "height": env.height,
        }

    def op_reset(self, request):
        return self._env(request).reset()

    def op_step(self, request):
        return self._env(request).step(request.get("action"))

    def op_render(self, request):
        return self._env(request).render()

    def op_trace(self, request):
        """Run a whole scripted action sequence natively on a fresh stream.

        The env handle is re-seeded first, then every action is applied in
        order with an implicit reset whenever the previous step ended the
        episode, so the same seed plus the same action list always yields the
        same (obs, reward, done) stream.
        """
        h = self._env(request)
        h.rng = np.random.default_rng(int(request.get("seed", 0)))
        initial = h.reset()
        steps = []
        for action in request.get("actions", []):
            if h.done:
                h.reset()
            out = h.step(int(action))
            steps.append({"obs": out["obs"], "goal": out["goal"],
                          "reward": out["reward"], "done": out["done"]})
        return {"initial": {"obs": initial["obs"], "goal": initial["goal"]},
                "steps": steps}

    def op_close(self, request):
        handle = request.get("env")
        if handle in self._envs:
            del self._envs[handle]
        return {}

    def op_make_net(self, request):
        dims = [int(d) for d in request.get("layer_dims", [])]
        net = init_net(dims, np.random.default_rng(int(request.get("seed", 0))))
        handle = self._fresh_id()
        self._nets[handle] = net
        return {"net": handle, "layer_dims": net.layer_dims}

    def op_load_net(self, request):
        net, sidecar = load_checkpoint(request["path"])
        handle = self._fresh_id()
        self._nets[handle] = net
        return {"net": handle, "layer_dims": net.layer_dims,
                "config": sidecar.get("config", {})}

    def op_save_net(self, request):
        net = self._net(request)
        save_checkpoint(request["path"], net, config=request.get("config", {}))
        return {}

    def op_greedy_action(self, request):
        net = self._net(request)
        obs = np.asarray(request.get("obs", []), dtype=np.float64)
        goal = np.asarray(request.get("goal", []), dtype=np.float64)
        x = np.concatenate([obs, goal]) if goal.size else obs
        q = forward(net, x)
        return {"action": int(np.argmax(q)), "q": q.tolist()}

    def op_argmax_batch(self, request):
        net = self._net(request)
        actions = []
        for row in request.get("inputs", []):
            q = forward(net, np.asarray(row, dtype=np.float64))
            actions.append(int(np.argmax(q)))
        return {"actions": actions}


def serve(stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    bridge = Bridge()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        rid = None
        try:
            request = json.loads(line)
            rid = request.get("id")
            result = bridge.handle(request)
            response = {"id": rid, "ok": True}
            response.update(result)
        except Exception as e:  # errors go to the client, the loop survives
            response = {"id": rid, "ok": False,
                        "error": {"type": type(e).__name__, "message": str(e)}}
        stdout.write(json.dumps(response) + "\n")
        stdout.flush()


if __name__ == "__main__":
    serve()
