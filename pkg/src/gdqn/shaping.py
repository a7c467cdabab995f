"""Reward shaping for target stacking: overlap ratio and distance transform.

Both schemes turn the change of a scene-vs-target measure across one
transition into a tri-valued intermediate reward in {-1, 0, +1}. Progress on
the overlap ratio (fraction of the target's foreground already covered) is
rewarded when it grows; progress on the distance measure (sum of per-cell
minimum distances from the scene's foreground to the target's) is rewarded
when it shrinks.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class DistanceMap:
    """Per-cell minimum distance to the target foreground.

    Zero exactly on foreground cells and 1-Lipschitz under its metric:
    |D(p) - D(q)| <= dist(p, q).
    """

    values: np.ndarray
    metric: str = "manhattan"


def _check_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"raster shapes differ: {a.shape} vs {b.shape}")


def overlap_ratio(s: np.ndarray, g: np.ndarray) -> float:
    """|s intersect g| / |g| over foreground cells, in [0, 1]."""
    s = np.asarray(s)
    g = np.asarray(g)
    _check_same_dims(s, g)
    n_goal = int(np.count_nonzero(g))
    if n_goal == 0:
        raise ZeroDivisionError("target raster has no foreground cells")
    return int(np.count_nonzero((s != 0) & (g != 0))) / n_goal


def overlap_reward(s_prev: np.ndarray, s_next: np.ndarray, g: np.ndarray) -> int:
    """Sign of the overlap-ratio change across a transition, in {-1, 0, 1}.

    The denominator is shared, so the comparison is done on integer
    intersection counts and is exact.
    """
    s_prev = np.asarray(s_prev)
    s_next = np.asarray(s_next)
    g = np.asarray(g)
    _check_same_dims(s_prev, g)
    _check_same_dims(s_next, g)
    if int(np.count_nonzero(g)) == 0:
        raise ZeroDivisionError("target raster has no foreground cells")
    before = int(np.count_nonzero((s_prev != 0) & (g != 0)))
    after = int(np.count_nonzero((s_next != 0) & (g != 0)))
    if after > before:
        return 1
    if after < before:
        return -1
    return 0


def distance_transform(g: np.ndarray, metric: str = "manhattan") -> DistanceMap:
    """Exact per-cell minimum distance from every cell to the foreground of g.

    Manhattan uses a multi-source BFS (integer distances); Euclidean uses the
    exact two-pass squared-distance algorithm (per-row 1D scan, then a
    per-column lower envelope of parabolas).
    """
    g = np.asarray(g)
    if g.ndim != 2:
        raise ShapeError(f"expected a 2D raster, got shape {g.shape}")
    if int(np.count_nonzero(g)) == 0:
        raise ValueError("distance transform needs at least one foreground cell")
    if metric == "manhattan":
        values = _manhattan_bfs(g).astype(np.float64)
    elif metric == "euclidean":
        values = np.sqrt(_squared_euclidean(g))
    else:
        raise ValueError(f"unknown metric: {metric!r}")
    return DistanceMap(values=values, metric=metric)


def _manhattan_bfs(g: np.ndarray) -> np.ndarray:
    h, w = g.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    queue = deque()
    for y, x in zip(*np.nonzero(g)):
        dist[y, x] = 0
        queue.append((int(y), int(x)))
    while queue:
        y, x = queue.popleft()
        d = dist[y, x] + 1
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and dist[ny, nx] < 0:
                dist[ny, nx] = d
                queue.append((ny, nx))
    return dist


def _squared_euclidean(g: np.ndarray) -> np.ndarray:
    h, w = g.shape
    inf = np.iinfo(np.int64).max // 4

    # pass 1: per-row distance to the nearest foreground cell in that row
    row_d = np.full((h, w), inf, dtype=np.int64)
    for y in range(h):
        run = inf
        for x in range(w):
            run = 0 if g[y, x] else (run + 1 if run < inf else inf)
            row_d[y, x] = run
        run = inf
        for x in range(w - 1, -1, -1):
            run = 0 if g[y, x] else (run + 1 if run < inf else inf)
            if run < row_d[y, x]:
                row_d[y, x] = run

    # pass 2: per-column lower envelope of y -> row_d[q, x]^2 + (y - q)^2
    sq = np.zeros((h, w), dtype=np.int64)
    for x in range(w):
        # cap empty-row sentinels at h + w, already larger than any true distance
        f = np.minimum(row_d[:, x], h + w)
        f = f * f
        v = np.zeros(h + 1, dtype=np.int64)     # parabola apexes
        z = np.zeros(h + 1, dtype=np.float64)   # envelope breakpoints
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, h):
            while True:
                p = v[k]
                s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for y in range(h):
            while z[k + 1] < y:
                k += 1
            p = v[k]
            sq[y, x] = (y - p) ** 2 + f[p]
    return sq.astype(np.float64)


def distance_sum(s: np.ndarray, dmap: DistanceMap) -> float:
    """Sum of the distance map over s's foreground cells."""
    s = np.asarray(s)
    _check_same_dims(s, dmap.values)
    return float(dmap.values[s != 0].sum())


def distance_reward(s_prev: np.ndarray, s_next: np.ndarray, dmap: DistanceMap) -> int:
    """+1 when the summed distance drops, -1 when it grows, 0 when unchanged."""
    before = distance_sum(s_prev, dmap)
    after = distance_sum(s_next, dmap)
    if after < before:
        return 1
    if after > before:
        return -1
    return 0
