"""Versioned binary checkpoint format for DenseNet parameters.

Layout (all little-endian):

    magic   5 bytes   b"GDQN1"
    n_dims  uint32
    dims    n_dims * uint32
    params  per layer: weights row-major float64, then biases float64

A JSON sidecar at `<path>.json` carries the experiment config and echoes the
layer dims. Save/load round-trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .nets import DenseNet

MAGIC = b"GDQN1"


def save_checkpoint(path, net: DenseNet, config: dict | None = None) -> None:
    path = Path(path)
    parts = [MAGIC, struct.pack("<I", len(net.layer_dims))]
    parts.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    path.write_bytes(b"".join(parts))
    sidecar = {
        "format": MAGIC.decode(),
        "layer_dims": list(net.layer_dims),
        "config": config or {},
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path, expected_dims: list[int] | None = None) -> tuple[DenseNet, dict]:
    """Read a checkpoint; returns (net, sidecar dict).

    Validates the magic, that the payload length matches the declared dims
    exactly, and (when given) that the dims equal `expected_dims`.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise ParseError(f"bad magic, expected {MAGIC!r}", offset=0)
    off = len(MAGIC)
    if len(raw) < off + 4:
        raise ParseError("truncated header", offset=len(raw))
    (n_dims,) = struct.unpack_from("<I", raw, off)
    off += 4
    if n_dims < 2 or len(raw) < off + 4 * n_dims:
        raise ParseError("truncated or invalid dims table", offset=off)
    dims = list(struct.unpack_from(f"<{n_dims}I", raw, off))
    off += 4 * n_dims

    n_params = sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(n_dims - 1))
    if len(raw) != off + 8 * n_params:
        raise ParseError(
            f"payload is {len(raw) - off} bytes, dims {dims} require {8 * n_params}",
            offset=off,
        )
    if expected_dims is not None and dims != list(expected_dims):
        raise ConfigError(f"checkpoint dims {dims} do not match expected {list(expected_dims)}")

    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=off)
        off += 8 * fan_out * fan_in
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    net = DenseNet(layer_dims=dims, weights=weights, biases=biases)

    sidecar_path = Path(str(path) + ".json")
    sidecar = {}
    if sidecar_path.exists():
        sidecar = json.loads(sidecar_path.read_text())
        if sidecar.get("layer_dims") != dims:
            raise ConfigError("sidecar layer_dims disagree with the binary checkpoint")
    return net, sidecar
