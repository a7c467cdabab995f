"""Stacking environment tests.

The stability verdict is checked against a test-local torque oracle that
rasterizes blocks, finds support contacts by scanning cells, and balances
gravity torques about the support hull edges in exact Fraction arithmetic.
"""

from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from gdqn.errors import ConfigError, ShapeError, StateError
from gdqn.stacking import (BLOCK_LEN, COLLAPSE, COLLISION, CONTINUING,
                           FINISHED, GROUP_SIZES, HORIZONTAL, VERTICAL, Block,
                           StackEnv, StackScene, generate_targets, match_target,
                           occupancy, render, scripted_build, stability,
                           stack_encode, stack_encode_raw, stack_reset,
                           stack_step, targets_from_json, targets_to_json)

LEFT, RIGHT, DOWN = range(3)


# ---------------------------------------------------------------------------
# torque/support oracle
# ---------------------------------------------------------------------------

def cells_of(block):
    if block.orientation == HORIZONTAL:
        return [(block.x + i, block.y) for i in range(BLOCK_LEN)]
    return [(block.x, block.y + i) for i in range(BLOCK_LEN)]


def rasterize(blocks, width, height):
    owner = np.full((height, width), -1, dtype=int)
    for i, b in enumerate(blocks):
        for (x, y) in cells_of(b):
            assert owner[y, x] == -1, "oracle fed overlapping blocks"
            owner[y, x] = i
    return owner


def oracle_stable(blocks, width, height):
    """Exhaustive torque balance: every load group must have non-tipping
    torques about both edges of its support hull."""
    if not blocks:
        return True
    owner = rasterize(blocks, width, height)
    n = len(blocks)
    rests_on = [set() for _ in range(n)]
    for j, b in enumerate(blocks):
        for (x, y) in cells_of(b):
            if y + 1 < height and owner[y + 1, x] not in (-1, j):
                rests_on[j].add(int(owner[y + 1, x]))

    for i in range(n):
        group = {i}
        while True:
            grew = {j for j in range(n)
                    if j not in group and rests_on[j] & group}
            if not grew:
                break
            group |= grew

        support_cols = []
        for m in group:
            for (x, y) in cells_of(blocks[m]):
                if y + 1 == height:
                    support_cols.append(x)
                elif owner[y + 1, x] != -1 and owner[y + 1, x] not in group:
                    support_cols.append(x)
        if not support_cols:
            return False
        left = Fraction(min(support_cols))
        right = Fraction(max(support_cols) + 1)
        centers = [Fraction(2 * x + 1, 2)
                   for m in group for (x, _y) in cells_of(blocks[m])]
        tau_left = sum(c - left for c in centers)
        tau_right = sum(c - right for c in centers)
        if not (tau_left > 0 and tau_right < 0):
            return False
    return True


def oracle_drop(owner_blocks, x, orientation, width, height):
    """Test-local gravity drop from the top boundary; None when x is unusable."""
    occ = np.zeros((height, width), dtype=bool)
    for b in owner_blocks:
        for (cx, cy) in cells_of(b):
            occ[cy, cx] = True
    ew = BLOCK_LEN if orientation == HORIZONTAL else 1
    eh = 1 if orientation == HORIZONTAL else BLOCK_LEN
    if x < 0 or x + ew > width:
        return None
    cand = Block(x, 0, orientation)
    if any(occ[cy, cx] for (cx, cy) in cells_of(cand)):
        return None
    while True:
        bottom = [(cx, cy) for (cx, cy) in cells_of(cand) if cy == cand.y + eh - 1]
        if cand.y + eh == height or any(occ[cy + 1, cx] for (cx, cy) in bottom):
            return cand
        cand = Block(cand.x, cand.y + 1, orientation)


# ---------------------------------------------------------------------------
# stability
# ---------------------------------------------------------------------------

class TestStability:
    def test_single_block_on_floor(self):
        assert stability([Block(3, 11, HORIZONTAL)], 12, 12)

    def test_aligned_two_stack(self):
        assert stability([Block(3, 11, HORIZONTAL), Block(3, 10, HORIZONTAL)], 12, 12)

    def test_offset_three_tips_over(self):
        # upper center of mass at 8.5, support interval ends at 8
        assert not stability([Block(0, 11, HORIZONTAL), Block(3, 10, HORIZONTAL)],
                             12, 12)

    def test_offset_two_holds(self):
        assert stability([Block(0, 11, HORIZONTAL), Block(2, 10, HORIZONTAL)], 12, 12)

    def test_counterweight_on_inner_end(self):
        # the middle block alone would tip; a block on its inner end holds it
        base = Block(0, 11, HORIZONTAL)
        mid = Block(3, 10, HORIZONTAL)
        top = Block(3, 9, HORIZONTAL)
        assert not stability([base, mid], 12, 12)
        assert not stability([base, mid, top], 12, 12)
        top_inner = Block(1, 9, HORIZONTAL)
        assert oracle_stable([base, mid, top_inner], 12, 12) == \
            stability([base, mid, top_inner], 12, 12)

    def test_bridge_over_two_towers(self):
        a = Block(0, 11, HORIZONTAL)
        b = Block(7, 11, HORIZONTAL)
        span = Block(3, 10, HORIZONTAL)
        assert stability([a, b, span], 12, 12)
        assert oracle_stable([a, b, span], 12, 12)

    def test_overlap_rejected(self):
        with pytest.raises(StateError):
            stability([Block(0, 11, HORIZONTAL), Block(4, 11, HORIZONTAL)], 12, 12)

    def test_monotone_aligned_column(self):
        blocks = [Block(4, 11, HORIZONTAL)]
        for i in range(1, 4):
            blocks.append(Block(4, 11 - i, HORIZONTAL))
            assert stability(blocks, 12, 12)

    def test_two_block_exhaustive_offsets(self):
        width = height = 12
        for o1, o2 in product((HORIZONTAL, VERTICAL), repeat=2):
            ew1 = BLOCK_LEN if o1 == HORIZONTAL else 1
            for x1 in range(width - ew1 + 1):
                first = oracle_drop([], x1, o1, width, height)
                assert first is not None
                for off in range(-6, 7):
                    second = oracle_drop([first], first.x + off, o2, width, height)
                    if second is None:
                        continue
                    cfg = [first, second]
                    assert stability(cfg, width, height) == \
                        oracle_stable(cfg, width, height), (o1, o2, x1, off)


# ---------------------------------------------------------------------------
# reset / step dynamics
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def targets2():
    return generate_targets(2, 20, 20, rng=np.random.default_rng(7))


@pytest.fixture(scope="module")
def targets4():
    return generate_targets(4, 20, 20, rng=np.random.default_rng(7))


class TestReset:
    def test_deterministic_spawn(self, targets2):
        a = stack_reset(20, 20, targets2[0], np.random.default_rng(3))
        b = stack_reset(20, 20, targets2[0], np.random.default_rng(3))
        assert a.active == b.active
        assert a.blocks_spawned == 1
        assert a.placed == ()

    def test_first_orientation_matches_sequence(self, targets2):
        for t in targets2:
            s = stack_reset(20, 20, t, np.random.default_rng(0))
            assert s.active.orientation == t.orientation_seq[0]

    def test_spawn_always_in_bounds(self, targets2):
        rng = np.random.default_rng(11)
        t = targets2[0]
        ew = BLOCK_LEN if t.orientation_seq[0] == HORIZONTAL else 1
        xs = set()
        for _ in range(10_000):
            s = stack_reset(20, 20, t, rng)
            assert 0 <= s.active.x <= 20 - ew
            assert s.active.y == 0
            xs.add(s.active.x)
        assert xs == set(range(20 - ew + 1))

    def test_target_must_fit(self, targets2):
        with pytest.raises(ConfigError):
            stack_reset(10, 10, targets2[0], np.random.default_rng(0))


class TestStep:
    def test_left_into_wall_collides(self, targets2):
        rng = np.random.default_rng(0)
        s = stack_reset(20, 20, targets2[0], rng)
        s.active = Block(0, 0, s.active.orientation)
        nxt, outcome = stack_step(s, LEFT, rng)
        assert outcome == COLLISION
        assert nxt.outcome == COLLISION

    def test_drop_to_floor_places(self, targets2):
        rng = np.random.default_rng(1)
        s = stack_reset(20, 20, targets2[0], rng)
        outcome = CONTINUING
        placed_len = len(s.placed)
        while len(s.placed) == placed_len:
            s, outcome = stack_step(s, DOWN, rng)
        assert outcome in (CONTINUING, FINISHED)
        assert len(s.placed) == 1
        b = s.placed[0]
        assert b.y + b.extent[1] == 20  # rests on the floor

    def test_block_descends_one_cell_per_down(self, targets2):
        rng = np.random.default_rng(2)
        s = stack_reset(20, 20, targets2[0], rng)
        y0 = s.active.y
        nxt, _ = stack_step(s, DOWN, rng)
        assert nxt.active.y == y0 + 1

    def test_far_overhang_collapses(self):
        # target is irrelevant to the physics; build a scene by hand
        tgt = generate_targets(2, 20, 20, rng=np.random.default_rng(1))[0]
        rng = np.random.default_rng(0)
        s = stack_reset(20, 20, tgt, rng)
        base = Block(2, 19, HORIZONTAL)
        s = StackScene(width=20, height=20, target=tgt,
                       placed=(base,), active=Block(5, 0, HORIZONTAL),
                       blocks_spawned=2, occ=occupancy([base], 20, 20))
        outcome = CONTINUING
        while outcome == CONTINUING:
            s, outcome = stack_step(s, DOWN, rng)
        assert outcome == COLLAPSE
        assert not stability(s.placed, 20, 20)

    def test_step_after_terminal_rejected(self, targets2):
        rng = np.random.default_rng(0)
        s = stack_reset(20, 20, targets2[0], rng)
        s.active = Block(0, 0, s.active.orientation)
        s, _ = stack_step(s, LEFT, rng)
        with pytest.raises(StateError):
            stack_step(s, DOWN, rng)

    def test_gravity_free_flight_and_terminal_exclusivity(self, targets4):
        rng = np.random.default_rng(33)
        causes = []
        for _ in range(200):
            t = targets4[int(rng.integers(len(targets4)))]
            s = stack_reset(20, 20, t, rng)
            last_y = s.active.y
            spawned = s.blocks_spawned
            outcome = CONTINUING
            for _ in range(600):
                a = int(rng.integers(3))
                s, outcome = stack_step(s, a, rng)
                if s.active is not None:
                    if s.blocks_spawned == spawned:
                        assert s.active.y >= last_y
                    last_y = s.active.y
                    spawned = s.blocks_spawned
                if outcome != CONTINUING:
                    break
            assert outcome in (COLLISION, COLLAPSE, FINISHED)
            causes.append(outcome)
        assert set(causes) <= {COLLISION, COLLAPSE, FINISHED}

    def test_placement_adds_exactly_five_cells(self, targets2):
        rng = np.random.default_rng(5)
        s = stack_reset(20, 20, targets2[0], rng)
        before = int(s.occ.sum())
        outcome = CONTINUING
        while len(s.placed) == 0 and outcome == CONTINUING:
            s, outcome = stack_step(s, DOWN, rng)
        assert int(s.occ.sum()) == before + BLOCK_LEN


class TestRenderAndMatch:
    def test_empty_scene_renders_zero(self, targets2):
        s = StackScene(width=20, height=20, target=targets2[0], placed=(),
                       active=None, blocks_spawned=0,
                       occ=np.zeros((20, 20), dtype=np.uint8))
        assert render(s).sum() == 0
        obs, _ = stack_encode(s)
        assert np.all(obs == 0.0)

    def test_single_placed_block_bottom_row(self, targets2):
        b = Block(2, 19, HORIZONTAL)
        s = StackScene(width=20, height=20, target=targets2[0], placed=(b,),
                       active=None, blocks_spawned=1,
                       occ=occupancy([b], 20, 20))
        r = render(s)
        assert r.sum() == 5
        assert np.array_equal(np.nonzero(r[19])[0], np.arange(2, 7))

    def test_raster_mass_counts_blocks(self, targets4):
        rng = np.random.default_rng(3)
        s = stack_reset(20, 20, targets4[0], rng)
        n_blocks_in_scene = len(s.placed) + (1 if s.active else 0)
        assert render(s).sum() == BLOCK_LEN * n_blocks_in_scene

    def test_match_exact_and_one_cell_off(self, targets2):
        t = targets2[0]
        assert match_target(t.raster, t)
        off = t.raster.copy()
        y, x = np.argwhere(off == 0)[0]
        off[y, x] = 1
        assert not match_target(off, t)

    def test_match_shape_error(self, targets2):
        with pytest.raises(ShapeError):
            match_target(np.zeros((5, 5)), targets2[0])


class TestEncode:
    def test_obs_and_goal_lengths(self, targets2):
        s = stack_reset(20, 20, targets2[0], np.random.default_rng(0))
        obs, goal = stack_encode(s)
        assert obs.shape == (400,) and goal.shape == (400,)
        assert set(np.unique(obs)) <= {0.0, 0.5, 1.0}
        assert set(np.unique(goal)) <= {0.0, 1.0}

    def test_active_cells_marked_two(self, targets2):
        s = stack_reset(20, 20, targets2[0], np.random.default_rng(0))
        raw, _ = stack_encode_raw(s)
        assert (raw == 2).sum() == BLOCK_LEN

    def test_distinct_pairs_distinct_encodings(self, targets4):
        seen = set()
        for t in targets4:
            s = stack_reset(20, 20, t, np.random.default_rng(0))
            obs, goal = stack_encode(s, t)
            seen.add(obs.tobytes() + goal.tobytes())
        assert len(seen) == len(targets4)


class TestTargets:
    def test_group_sizes(self):
        assert GROUP_SIZES == {2: 4, 3: 6, 4: 8}
        for n in (2, 3, 4):
            tg = generate_targets(n, 20, 20, rng=np.random.default_rng(7))
            assert len(tg) == GROUP_SIZES[n]
            assert all(t.n_blocks == n for t in tg)

    def test_deterministic_per_seed(self):
        a = generate_targets(3, 20, 20, rng=np.random.default_rng(5))
        b = generate_targets(3, 20, 20, rng=np.random.default_rng(5))
        assert all(x == y for x, y in zip(a, b))

    def test_all_targets_distinct(self):
        tg = generate_targets(4, 20, 20, rng=np.random.default_rng(7))
        assert len({t.raster.tobytes() for t in tg}) == len(tg)

    def test_rasters_are_block_unions_and_stable(self):
        for n in (2, 3, 4):
            for t in generate_targets(n, 20, 20, rng=np.random.default_rng(7)):
                assert np.array_equal(occupancy(t.blocks, 20, 20), t.raster)
                assert stability(list(t.blocks), 20, 20)
                assert oracle_stable(list(t.blocks), 20, 20)

    def test_replay_oracle_reproduces_every_target(self):
        rng = np.random.default_rng(99)
        for n in (2, 3, 4):
            for t in generate_targets(n, 20, 20, rng=np.random.default_rng(7)):
                scene, outcome, _ = scripted_build(t, 20, 20, rng)
                assert outcome == FINISHED
                assert match_target(scene.occ, t)

    def test_unstable_candidate_rejected(self):
        # a hand-built tipping configuration can never be a target
        bad = [Block(0, 19, HORIZONTAL), Block(3, 18, HORIZONTAL)]
        assert not stability(bad, 20, 20)

    def test_json_round_trip(self):
        tg = generate_targets(2, 20, 20, rng=np.random.default_rng(7))
        loaded, w, h = targets_from_json(targets_to_json(tg, 20, 20))
        assert (w, h) == (20, 20)
        assert all(a == b for a, b in zip(tg, loaded))

    @pytest.mark.parametrize("n_blocks", [2, 3, 4])
    def test_golden_files_pin_seed7_groups(self, n_blocks):
        import pathlib
        golden_path = (pathlib.Path(__file__).parent / "golden"
                       / f"targets_{n_blocks}block_seed7.json")
        golden, w, h = targets_from_json(golden_path.read_text())
        regenerated = generate_targets(n_blocks, w, h,
                                       rng=np.random.default_rng(7))
        assert len(golden) == len(regenerated)
        assert all(a == b for a, b in zip(golden, regenerated))


class TestStackEnvShaping:
    def test_sideways_move_gives_zero_overlap_reward(self, targets2):
        env = StackEnv(targets2, shaping="overlap")
        rng = np.random.default_rng(4)
        s = env.reset(rng)
        if s.active.x == 0:
            s, r, done, _ = env.step(s, RIGHT, rng)
        else:
            s, r, done, _ = env.step(s, LEFT, rng)
        assert r == 0.0 and not done

    def test_placement_on_target_earns_overlap_reward(self, targets2):
        env = StackEnv(targets2, shaping="overlap")
        rng = np.random.default_rng(4)
        t = targets2[0]
        scene = stack_reset(20, 20, t, rng)
        scene.active = t.blocks[0]
        nxt, r, done, _ = env.step(scene, DOWN, rng)
        assert r == 1.0  # five correct cells joined the placed set

    def test_inflight_distance_reward(self, targets2):
        env = StackEnv(targets2, shaping="distance")
        rng = np.random.default_rng(4)
        t = targets2[0]
        scene = stack_reset(20, 20, t, rng)
        tx = t.blocks[0].x
        if scene.active.x == tx:
            return  # already above the target column; nothing to assert
        toward = RIGHT if tx > scene.active.x else LEFT
        _, r, done, _ = env.step(scene, toward, rng)
        assert done or r == 1.0

    def test_terminal_bonus_on_exact_match(self, targets2):
        env = StackEnv(targets2, shaping="none")
        rng = np.random.default_rng(8)
        t = targets2[0]
        scene = stack_reset(20, 20, t, rng)
        total = 0.0
        for want in t.blocks:
            while scene.active is not None and scene.active.x != want.x:
                a = LEFT if want.x < scene.active.x else RIGHT
                scene, r, done, info = env.step(scene, a, rng)
                total += r
            placed_before = len(scene.placed)
            while scene.outcome is None and len(scene.placed) == placed_before:
                scene, r, done, info = env.step(scene, DOWN, rng)
                total += r
        assert info["cause"] == FINISHED
        assert info["matched"] is True
        assert info["overlap"] == 1.0
        assert total == 1.0
