"""2D target block stacking: spawning, motion, placement, stability, matching.

Blocks are 5x1 dominoes (horizontal) or 1x5 (vertical) on a cell grid,
default 20x20. A block spawns at the top boundary at a random column and is
steered with {left, right, down}. Sideways contact with the boundary or the
standing structure is a collision and ends the episode; downward contact is a
placement. A placement that tips the structure over (collapse) ends the
episode, as does placing the final block (finished). The task reward is +1
exactly when the episode finishes with the placed cells equal to the target
raster.

Stability is judged quasi-statically: for every block, the combined center of
mass of the block plus everything resting (transitively) on it must lie
strictly inside the horizontal span of the contacts that carry that group
(floor or blocks below). Uniform density; all comparisons in exact integer
arithmetic, so verdicts are reproducible and oracle-checkable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError, StateError
from .shaping import distance_transform, overlap_reward, overlap_ratio, distance_sum

STACK_ACTIONS = ("left", "right", "down")
BLOCK_LEN = 5

HORIZONTAL = "horizontal"
VERTICAL = "vertical"

# step outcomes
CONTINUING = "continuing"
COLLISION = "collision"
COLLAPSE = "collapse"
FINISHED = "finished"
TERMINAL_OUTCOMES = (COLLISION, COLLAPSE, FINISHED)

GROUP_SIZES = {2: 4, 3: 6, 4: 8}


@dataclass(frozen=True)
class Block:
    x: int
    y: int
    orientation: str

    @property
    def extent(self) -> tuple[int, int]:
        return (BLOCK_LEN, 1) if self.orientation == HORIZONTAL else (1, BLOCK_LEN)

    def cells(self):
        if self.orientation == HORIZONTAL:
            return [(self.x + i, self.y) for i in range(BLOCK_LEN)]
        return [(self.x, self.y + i) for i in range(BLOCK_LEN)]

    def bottom_cells(self):
        """Cells whose underside faces open space or support."""
        if self.orientation == HORIZONTAL:
            return [(self.x + i, self.y) for i in range(BLOCK_LEN)]
        return [(self.x, self.y + BLOCK_LEN - 1)]


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """A buildable goal structure: raster, block count, and placement order."""

    raster: np.ndarray
    n_blocks: int
    orientation_seq: tuple[str, ...]
    id: int
    blocks: tuple[Block, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, TargetSpec):
            return NotImplemented
        return (
            self.id == other.id
            and self.n_blocks == other.n_blocks
            and self.orientation_seq == other.orientation_seq
            and np.array_equal(self.raster, other.raster)
            and self.blocks == other.blocks
        )


@dataclass
class StackScene:
    width: int
    height: int
    target: TargetSpec
    placed: tuple[Block, ...]
    active: Block | None
    blocks_spawned: int
    outcome: str | None = None
    # occupancy of placed blocks only; shared across move steps, copied on placement
    occ: np.ndarray = field(default=None, repr=False)


def _block_in_bounds(b: Block, width: int, height: int) -> bool:
    ew, eh = b.extent
    return 0 <= b.x and b.x + ew <= width and 0 <= b.y and b.y + eh <= height


def _fill(occ: np.ndarray, b: Block, value: int = 1) -> None:
    if b.orientation == HORIZONTAL:
        occ[b.y, b.x : b.x + BLOCK_LEN] = value
    else:
        occ[b.y : b.y + BLOCK_LEN, b.x] = value


def _overlaps(occ: np.ndarray, b: Block) -> bool:
    if b.orientation == HORIZONTAL:
        return bool(occ[b.y, b.x : b.x + BLOCK_LEN].any())
    return bool(occ[b.y : b.y + BLOCK_LEN, b.x].any())


def occupancy(placed, width: int, height: int) -> np.ndarray:
    occ = np.zeros((height, width), dtype=np.uint8)
    for b in placed:
        _fill(occ, b)
    return occ


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

def stability(placed, width: int | None = None, height: int | None = None) -> bool:
    """Quasi-static verdict for a set of resting blocks.

    For every block b, take the group of b plus all blocks transitively
    resting on b. The group's center of mass (exact, in half-cell units) must
    lie strictly inside [min, max] of the contact columns through which the
    group is carried by the floor or by blocks outside the group. A group
    carried by nothing is falling, hence unstable.
    """
    blocks = list(placed)
    if not blocks:
        return True
    if width is None:
        width = max(b.x + b.extent[0] for b in blocks)
    if height is None:
        height = max(b.y + b.extent[1] for b in blocks)
    for b in blocks:
        if not _block_in_bounds(b, width, height):
            raise StateError(f"block out of bounds: {b}")
    occ_check = np.zeros((height, width), dtype=np.uint8)
    for b in blocks:
        if _overlaps(occ_check, b):
            raise StateError("blocks overlap")
        _fill(occ_check, b)

    cell_owner = {}
    for i, b in enumerate(blocks):
        for c in b.cells():
            cell_owner[c] = i

    floor_row = height - 1
    n = len(blocks)
    rests_on = [set() for _ in range(n)]      # block index -> indices it rests on
    on_floor = [False] * n
    contact_cols = [dict() for _ in range(n)]  # supporter index -> sorted contact columns
    floor_cols = [[] for _ in range(n)]
    for i, b in enumerate(blocks):
        for (cx, cy) in b.bottom_cells():
            if cy == floor_row:
                on_floor[i] = True
                floor_cols[i].append(cx)
                continue
            below = cell_owner.get((cx, cy + 1))
            if below is not None:
                rests_on[i].add(below)
                contact_cols[i].setdefault(below, []).append(cx)

    supported_by = [set() for _ in range(n)]   # block index -> blocks directly on it
    for i in range(n):
        for j in rests_on[i]:
            supported_by[j].add(i)

    for i in range(n):
        # group: i plus everything transitively resting on i
        group = {i}
        stack = [i]
        while stack:
            cur = stack.pop()
            for nxt in supported_by[cur]:
                if nxt not in group:
                    group.add(nxt)
                    stack.append(nxt)

        # carrying contacts: member-to-floor, and member-to-nonmember
        left_edge = None
        right_edge = None
        for m in group:
            cols = list(floor_cols[m])
            for supporter, sup_cols in contact_cols[m].items():
                if supporter not in group:
                    cols.extend(sup_cols)
            for cx in cols:
                if left_edge is None or cx < left_edge:
                    left_edge = cx
                if right_edge is None or cx + 1 > right_edge:
                    right_edge = cx + 1
        if left_edge is None:
            return False  # nothing carries this group

        # center of mass in half-cell units: sum of (2x + 1) over member cells
        com_num = 0
        n_cells = 0
        for m in group:
            for (cx, _cy) in blocks[m].cells():
                com_num += 2 * cx + 1
                n_cells += 1
        # strict: left_edge < com < right_edge, cross-multiplied to integers
        if not (com_num > 2 * n_cells * left_edge and com_num < 2 * n_cells * right_edge):
            return False
    return True


# ---------------------------------------------------------------------------
# environment dynamics
# ---------------------------------------------------------------------------

def _spawn_columns(occ: np.ndarray, orientation: str, width: int) -> list[int]:
    """Columns where a fresh block at y=0 fits in bounds without overlap."""
    ew = BLOCK_LEN if orientation == HORIZONTAL else 1
    cols = []
    for x in range(width - ew + 1):
        if not _overlaps(occ, Block(x, 0, orientation)):
            cols.append(x)
    return cols


def _spawn(scene: StackScene, rng: np.random.Generator) -> Block:
    orientation = scene.target.orientation_seq[scene.blocks_spawned]
    cols = _spawn_columns(scene.occ, orientation, scene.width)
    if not cols:
        raise StateError("no free spawn column at the top boundary")
    return Block(int(cols[int(rng.integers(len(cols)))]), 0, orientation)


def stack_reset(width: int, height: int, target: TargetSpec, rng: np.random.Generator) -> StackScene:
    """Fresh scene with the first block of the sequence spawned at the top."""
    th, tw = target.raster.shape
    if tw != width or th != height:
        raise ConfigError(f"target raster {tw}x{th} does not fit scene {width}x{height}")
    scene = StackScene(
        width=width,
        height=height,
        target=target,
        placed=(),
        active=None,
        blocks_spawned=0,
        occ=np.zeros((height, width), dtype=np.uint8),
    )
    scene.active = _spawn(scene, rng)
    scene.blocks_spawned = 1
    return scene


def stack_step(scene: StackScene, action: int, rng: np.random.Generator) -> tuple[StackScene, str]:
    """Apply one action; returns (next scene, outcome).

    Sideways contact (boundary or structure) is a collision; downward contact
    is a placement, which triggers the stability check and either ends the
    episode (collapse / finished) or spawns the next block.
    """
    if scene.outcome is not None or scene.active is None:
        raise StateError("step on a terminated episode")
    b = scene.active

    if action in (0, 1):  # left / right
        moved = replace(b, x=b.x + (-1 if action == 0 else 1))
        if not _block_in_bounds(moved, scene.width, scene.height) or _overlaps(scene.occ, moved):
            nxt = replace(scene, outcome=COLLISION)
            return nxt, COLLISION
        return replace(scene, active=moved), CONTINUING

    if action != 2:
        raise IndexError(f"action index {action} out of range for {STACK_ACTIONS}")

    # down
    ew, eh = b.extent
    at_floor = b.y + eh == scene.height
    blocked_below = False
    if not at_floor:
        for (cx, cy) in b.bottom_cells():
            if scene.occ[cy + 1, cx]:
                blocked_below = True
                break
    if not at_floor and not blocked_below:
        return replace(scene, active=replace(b, y=b.y + 1)), CONTINUING

    # contact below: release the block here
    new_placed = scene.placed + (b,)
    new_occ = scene.occ.copy()
    _fill(new_occ, b)
    nxt = replace(scene, placed=new_placed, active=None, occ=new_occ)
    if not stability(new_placed, scene.width, scene.height):
        nxt.outcome = COLLAPSE
        return nxt, COLLAPSE
    if scene.blocks_spawned == scene.target.n_blocks:
        nxt.outcome = FINISHED
        return nxt, FINISHED
    nxt.active = _spawn(nxt, rng)
    nxt.blocks_spawned = scene.blocks_spawned + 1
    return nxt, CONTINUING


def render(scene: StackScene) -> np.ndarray:
    """Binary occupancy of placed plus active blocks, shape (H, W)."""
    out = scene.occ.copy()
    if scene.active is not None:
        _fill(out, scene.active)
    return out


def match_target(placed_raster: np.ndarray, target: TargetSpec) -> bool:
    placed_raster = np.asarray(placed_raster)
    if placed_raster.shape != target.raster.shape:
        raise ShapeError(
            f"raster shape {placed_raster.shape} vs target {target.raster.shape}"
        )
    return bool(np.array_equal(placed_raster != 0, target.raster != 0))


def stack_encode(scene: StackScene, target: TargetSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Observation in {0, 0.5, 1} (placed=0.5, active=1) and goal in {0, 1}, flattened."""
    raw_obs, raw_goal = stack_encode_raw(scene, target)
    return raw_obs * 0.5, raw_goal.astype(np.float64)


def stack_encode_raw(scene: StackScene, target: TargetSpec | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Compact integer encoding: scene cells in {0,1,2} (active=2), goal in {0,1}."""
    if target is None:
        target = scene.target
    obs = scene.occ.copy()
    if scene.active is not None:
        _fill(obs, scene.active, value=2)
    return obs.reshape(-1), target.raster.reshape(-1).astype(np.uint8)


# ---------------------------------------------------------------------------
# target generation
# ---------------------------------------------------------------------------

def _drop(occ: np.ndarray, x: int, orientation: str, width: int, height: int) -> Block | None:
    """Lower a block from the top at column x until it rests; None if it cannot."""
    b = Block(x, 0, orientation)
    if not _block_in_bounds(b, width, height) or _overlaps(occ, b):
        return None
    while True:
        ew, eh = b.extent
        if b.y + eh == height:
            return b
        if any(occ[cy + 1, cx] for (cx, cy) in b.bottom_cells()):
            return b
        b = replace(b, y=b.y + 1)


def generate_targets(n_blocks: int, width: int = 20, height: int = 20,
                     rng: np.random.Generator | None = None,
                     count: int | None = None) -> list[TargetSpec]:
    """Deterministic-per-seed set of distinct, stable, buildable targets.

    Structures are produced by simulated construction: blocks are dropped one
    at a time at columns biased toward the existing structure, and a partial
    build is kept only while every prefix is stable. That makes every emitted
    target reachable by the same drop dynamics the environment uses.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    if n_blocks < 2:
        raise ConfigError("targets need at least 2 blocks")
    quota = count if count is not None else GROUP_SIZES.get(n_blocks, 2 * n_blocks)
    targets: list[TargetSpec] = []
    seen: set[bytes] = set()
    while len(targets) < quota:
        built = _attempt_build(n_blocks, width, height, rng)
        if built is None:
            continue
        blocks, orientations = built
        raster = occupancy(blocks, width, height)
        key = raster.tobytes()
        if key in seen:
            continue
        candidate = TargetSpec(
            raster=raster,
            n_blocks=n_blocks,
            orientation_seq=tuple(orientations),
            id=len(targets),
            blocks=tuple(blocks),
        )
        if not stability(blocks, width, height):
            continue
        scene, outcome, _ = scripted_build(candidate, width, height,
                                           np.random.default_rng(0))
        if outcome != FINISHED or not match_target(scene.occ, candidate):
            continue
        seen.add(key)
        targets.append(candidate)
    return targets


def _attempt_build(n_blocks, width, height, rng):
    # two structure families: towers (drops aimed at the standing structure)
    # and low spreads (drops anywhere), so each group spans difficulty
    spread = rng.random() < 0.45
    p_horizontal = 0.85 if spread else 0.6
    orientations = [HORIZONTAL if rng.random() < p_horizontal else VERTICAL
                    for _ in range(n_blocks)]
    occ = np.zeros((height, width), dtype=np.uint8)
    blocks: list[Block] = []
    for i, orientation in enumerate(orientations):
        ew = BLOCK_LEN if orientation == HORIZONTAL else 1
        placed_ok = False
        for _ in range(12):
            if not blocks or spread:
                x = int(rng.integers(0, width - ew + 1))
            else:
                lo = min(b.x for b in blocks)
                hi = max(b.x + b.extent[0] for b in blocks)
                x = int(rng.integers(max(0, lo - ew + 1), min(width - ew, hi - 1) + 1))
            cand = _drop(occ, x, orientation, width, height)
            if cand is None:
                continue
            if not stability(list(blocks) + [cand], width, height):
                continue
            blocks.append(cand)
            _fill(occ, cand)
            placed_ok = True
            break
        if not placed_ok:
            return None
    return blocks, orientations


def scripted_build(target: TargetSpec, width: int, height: int,
                   rng: np.random.Generator) -> tuple[StackScene, str, list[int]]:
    """Replay oracle: steer each block from its random spawn to the recorded
    placement with {left,right,down} and return the final scene, outcome, and
    the action trace."""
    scene = stack_reset(width, height, target, rng)
    actions: list[int] = []
    outcome = CONTINUING
    for want in target.blocks:
        while scene.active is not None and scene.active.x != want.x:
            a = 0 if want.x < scene.active.x else 1
            scene, outcome = stack_step(scene, a, rng)
            actions.append(a)
            if outcome in TERMINAL_OUTCOMES:
                return scene, outcome, actions
        placed_before = len(scene.placed)
        while scene.outcome is None and len(scene.placed) == placed_before:
            scene, outcome = stack_step(scene, 2, rng)
            actions.append(2)
        if outcome in TERMINAL_OUTCOMES:
            return scene, outcome, actions
    return scene, outcome, actions


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def targets_to_json(targets, width: int, height: int) -> str:
    payload = {
        "width": width,
        "height": height,
        "n_blocks": targets[0].n_blocks if targets else 0,
        "targets": [
            {
                "id": t.id,
                "orientations": list(t.orientation_seq),
                "blocks": [
                    {"x": b.x, "y": b.y, "orientation": b.orientation} for b in t.blocks
                ],
                "raster": [
                    "".join("#" if v else "." for v in row) for row in t.raster
                ],
            }
            for t in targets
        ],
    }
    return json.dumps(payload, indent=2)


def targets_from_json(text: str) -> tuple[list[TargetSpec], int, int]:
    payload = json.loads(text)
    width, height = payload["width"], payload["height"]
    targets = []
    for entry in payload["targets"]:
        raster = np.array(
            [[1 if ch == "#" else 0 for ch in row] for row in entry["raster"]],
            dtype=np.uint8,
        )
        blocks = tuple(
            Block(b["x"], b["y"], b["orientation"]) for b in entry["blocks"]
        )
        targets.append(
            TargetSpec(
                raster=raster,
                n_blocks=payload["n_blocks"],
                orientation_seq=tuple(entry["orientations"]),
                id=entry["id"],
                blocks=blocks,
            )
        )
    return targets, width, height


def save_targets(path, targets, width: int, height: int) -> None:
    Path(path).write_text(targets_to_json(targets, width, height))


def load_targets(path) -> tuple[list[TargetSpec], int, int]:
    return targets_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# training-loop adapter
# ---------------------------------------------------------------------------

class StackEnv:
    """Reset/step/encode adapter with optional reward shaping.

    Shaping ("overlap" or "distance") adds a tri-valued intermediate reward on
    top of the terminal +1. Overlap compares placed cells only, so hovering an
    unreleased block over the target earns nothing; distance includes the
    moving block, so in-flight progress toward the target is rewarded.
    """

    kind = "stack"
    obs_scale = 0.5
    goal_scale = 1.0

    def __init__(self, targets, width: int = 20, height: int = 20, shaping: str = "none"):
        if not targets:
            raise ConfigError("StackEnv needs at least one target")
        if shaping not in ("none", "overlap", "distance"):
            raise ConfigError(f"unknown shaping mode: {shaping!r}")
        self.targets = list(targets)
        self.width = width
        self.height = height
        self.shaping = shaping
        self.n_actions = len(STACK_ACTIONS)
        self.obs_dim = width * height
        self.goal_dim = width * height
        self._dmaps = {}
        if shaping == "distance":
            for t in self.targets:
                self._dmaps[t.id] = distance_transform(t.raster, "manhattan")

    def reset(self, rng: np.random.Generator) -> StackScene:
        target = self.targets[int(rng.integers(len(self.targets)))]
        return stack_reset(self.width, self.height, target, rng)

    def step(self, scene: StackScene, action: int, rng: np.random.Generator):
        prev_placed = scene.occ
        prev_flight = render(scene) if self.shaping == "distance" else None

        nxt, outcome = stack_step(scene, action, rng)
        done = outcome in TERMINAL_OUTCOMES

        matched = False
        if outcome == FINISHED:
            matched = match_target(nxt.occ, nxt.target)
        reward = 1.0 if matched else 0.0

        if self.shaping == "overlap":
            reward += overlap_reward(prev_placed, nxt.occ, scene.target.raster)
        elif self.shaping == "distance":
            dmap = self._dmaps[scene.target.id]
            if outcome == COLLISION:
                pass  # the move never happened
            else:
                # same block set on both sides: placed cells plus the block
                # that moved (or was released); a freshly spawned block joins
                # the comparison from the next transition on
                if nxt.active is not None and len(nxt.placed) == len(scene.placed):
                    next_flight = render(nxt)
                else:
                    next_flight = nxt.occ
                before = distance_sum(prev_flight, dmap)
                after = distance_sum(next_flight, dmap)
                if after < before:
                    reward += 1.0
                elif after > before:
                    reward -= 1.0

        info = {"cause": outcome if done else None}
        if done:
            info.update(self.final_stats(nxt))
            info["matched"] = matched
        return nxt, reward, done, info

    def encode(self, scene: StackScene):
        return stack_encode(scene)

    def encode_raw(self, scene: StackScene):
        return stack_encode_raw(scene)

    def episode_meta(self, scene: StackScene) -> dict:
        return {"goal_id": scene.target.id}

    def final_stats(self, scene: StackScene) -> dict:
        return {"overlap": overlap_ratio(scene.occ, scene.target.raster)}

    def eval_step_cap(self) -> int:
        return 400
