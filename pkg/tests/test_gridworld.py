"""Simulator contracts: determinism, dynamics, visibility, rewards."""

import json
import random
from collections import Counter
from fractions import Fraction

import pytest

from epigrid.gridworld import (
    Action,
    Color,
    Direction,
    EntityKind,
    Environment,
    EpisodeOver,
    DoorState,
    HELD_OUT_OBJECT_PAIRS,
    LayoutError,
    Position,
    SEEN_OBJECT_PAIRS,
    Task,
    TaskSpec,
    default_spec,
    new_env,
    plan_episode,
    rel_to_abs,
    sample_task_spec,
    visible_rel_cells,
    VIEW_DEPTH,
    VIEW_HALF,
)
from helpers import build_env


def _random_spec(task, rng):
    return sample_task_spec(task, rng)


# ---------------------------------------------------------------------------
# Construction and determinism
# ---------------------------------------------------------------------------

def test_gotolocal_has_one_room_eight_distractors_one_target():
    env = new_env(default_spec(Task.GO_TO_LOCAL, (Color.RED, EntityKind.BALL)), 7)
    objects = [e for e in env.cells.values() if e.kind is not EntityKind.WALL]
    assert len(env.rooms) == 1
    assert len(objects) == 9  # target + 8 distractors
    assert sum(1 for e in objects
               if (e.color, e.kind) == (Color.RED, EntityKind.BALL)) == 1


def test_unlocklocal_has_locked_door_and_matching_key():
    env = new_env(default_spec(Task.UNLOCK_LOCAL, (Color.BLUE, EntityKind.DOOR)), 0)
    doors = [e for e in env.cells.values() if e.kind is EntityKind.DOOR]
    assert len(doors) == 1
    assert doors[0].state is DoorState.LOCKED
    assert doors[0].color is Color.BLUE
    keys = [e for e in env.cells.values()
            if e.kind is EntityKind.KEY and e.color is Color.BLUE]
    assert len(keys) >= 1


def test_findobj_spans_six_rooms():
    env = new_env(sample_task_spec(Task.FIND_OBJ, random.Random(3)), 11)
    assert len(env.rooms) == 6
    assert env.spec.max_steps == 320


def test_same_spec_seed_identical_state():
    spec = default_spec(Task.GO_TO_LOCAL, (Color.GREEN, EntityKind.BOX))
    a, b = new_env(spec, 12345), new_env(spec, 12345)
    assert a.cells == b.cells
    assert (a.agent_pos, a.agent_dir) == (b.agent_pos, b.agent_dir)


def test_different_seed_usually_differs():
    spec = default_spec(Task.GO_TO_LOCAL, (Color.GREEN, EntityKind.BOX))
    assert any(new_env(spec, s).cells != new_env(spec, 0).cells for s in (1, 2, 3))


def test_mission_names_target():
    spec = default_spec(Task.PICKUP_LOCAL, (Color.YELLOW, EntityKind.KEY))
    env = new_env(spec, 5)
    assert "yellow key" in env.mission
    assert env.reset().mission == env.mission


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        TaskSpec(Task.GO_TO_LOCAL, (Color.RED, EntityKind.BALL), rooms=2).validate()
    with pytest.raises(ValueError):
        TaskSpec(Task.UNLOCK_LOCAL, (Color.RED, EntityKind.BALL)).validate()
    with pytest.raises(ValueError):
        TaskSpec(Task.GO_TO_LOCAL, (Color.RED, EntityKind.BALL), max_steps=0).validate()


def test_reset_restores_initial_observation():
    env = new_env(default_spec(Task.GO_TO_LOCAL, (Color.RED, EntityKind.BALL)), 99)
    first = env.reset()
    rng = random.Random(0)
    for _ in range(20):
        if env.done:
            break
        env.step(rng.choice(list(Action)))
    again = env.reset()
    assert again == first
    assert env.steps_used == 0


def test_determinism_identical_step_sequences():
    spec = default_spec(Task.UNLOCK_LOCAL, (Color.RED, EntityKind.DOOR))
    actions = [random.Random(4).choice(list(Action)) for _ in range(40)]
    results = []
    for _ in range(2):
        env = new_env(spec, 77)
        env.reset()
        trail = []
        for action in actions:
            if env.done:
                break
            result = env.step(action)
            trail.append((result.observation.view_lines, result.reward,
                          result.done, result.success))
        results.append(trail)
    assert results[0] == results[1]


# ---------------------------------------------------------------------------
# Transition rules
# ---------------------------------------------------------------------------

def test_forward_into_wall_is_noop_but_consumes_step():
    env = build_env(agent=(1, 1, "north"))
    result = env.step(Action.GO_FORWARD)
    assert env.agent_pos == Position(1, 1)
    assert result.reward == 0.0
    assert env.steps_used == 1


def test_forward_into_object_is_blocked():
    env = build_env(agent=(4, 4, "north"), entities=[(4, 3, "ball", "blue")])
    env.step(Action.GO_FORWARD)
    assert env.agent_pos == Position(4, 4)


def test_turns_cycle_through_directions():
    env = build_env(agent=(4, 4, "north"))
    seen = [env.agent_dir]
    for _ in range(4):
        env.step(Action.TURN_RIGHT)
        seen.append(env.agent_dir)
    assert seen == [Direction.NORTH, Direction.EAST, Direction.SOUTH,
                    Direction.WEST, Direction.NORTH]


def test_pickup_requires_facing_and_empty_hands():
    env = build_env(task="PickupLocal", target=("blue", "ball"),
                    agent=(4, 4, "north"), entities=[(4, 3, "ball", "blue")])
    env.step(Action.PICK_UP)
    assert env.carrying == (Color.BLUE, EntityKind.BALL)
    assert Position(4, 3) not in env.cells
    env2 = build_env(task="PickupLocal", target=("blue", "ball"),
                     agent=(4, 4, "north"), entities=[(4, 3, "ball", "blue")],
                     carrying=("red", "key"))
    env2.step(Action.PICK_UP)
    assert env2.carrying == (Color.RED, EntityKind.KEY)
    assert Position(4, 3) in env2.cells


def test_drop_places_item_ahead():
    env = build_env(agent=(4, 4, "north"), carrying=("red", "key"))
    env.step(Action.DROP)
    assert env.carrying is None
    assert env.cells[Position(4, 3)].kind is EntityKind.KEY


def test_toggle_locked_door_needs_matching_key():
    def unlock_env(carrying):
        return build_env(task="UnlockLocal", target=("red", "door"),
                         agent=(4, 1, "north"),
                         entities=[(4, 0, "door", "red", "locked")],
                         carrying=carrying, target_pos=(4, 0))

    env = unlock_env(None)
    env.step(Action.TOGGLE)
    assert env.cells[Position(4, 0)].state is DoorState.LOCKED

    env = unlock_env(("blue", "key"))
    env.step(Action.TOGGLE)
    assert env.cells[Position(4, 0)].state is DoorState.LOCKED

    env = unlock_env(("red", "key"))
    result = env.step(Action.TOGGLE)
    assert env.cells[Position(4, 0)].state is DoorState.OPEN
    assert result.success and result.done and result.reward > 0


def test_toggle_cycles_closed_open():
    env = build_env(agent=(4, 1, "north"),
                    entities=[(4, 0, "door", "green", "closed")])
    env.step(Action.TOGGLE)
    assert env.cells[Position(4, 0)].state is DoorState.OPEN
    env.step(Action.TOGGLE)
    assert env.cells[Position(4, 0)].state is DoorState.CLOSED


def test_step_after_done_raises():
    env = build_env(task="PickupLocal", target=("blue", "ball"),
                    agent=(4, 4, "north"), entities=[(4, 3, "ball", "blue")])
    result = env.step(Action.PICK_UP)
    assert result.done
    with pytest.raises(EpisodeOver):
        env.step(Action.TURN_LEFT)


def test_success_reward_formula():
    env = build_env(task="GoToLocal", target=("blue", "ball"),
                    agent=(4, 5, "east"), entities=[(4, 3, "ball", "blue")])
    env.step(Action.TURN_LEFT)  # facing north, ball two ahead
    result = env.step(Action.GO_FORWARD)  # now facing it one ahead
    assert result.success
    assert result.reward == pytest.approx(1.0 - 0.9 * 2 / 64)


def test_reward_bounds_over_random_play():
    rng = random.Random(11)
    for trial in range(20):
        env = new_env(_random_spec(Task.GO_TO_LOCAL, random.Random(trial)), trial)
        env.reset()
        while not env.done:
            result = env.step(rng.choice(list(Action)))
            assert result.reward == 0.0 or 0.1 <= result.reward <= 1.0
            if result.success:
                assert result.done


# ---------------------------------------------------------------------------
# Conservation
# ---------------------------------------------------------------------------

def _entity_multiset(env):
    items = Counter()
    for entity in env.cells.values():
        if entity.kind in (EntityKind.KEY, EntityKind.BALL, EntityKind.BOX):
            items[(entity.color, entity.kind)] += 1
    if env.carrying is not None:
        items[env.carrying] += 1
    return items


def test_entity_conservation_under_random_actions():
    for trial in range(10):
        env = new_env(_random_spec(Task.PICKUP_LOCAL, random.Random(trial)), 60 + trial)
        env.reset()
        baseline = _entity_multiset(env)
        rng = random.Random(trial)
        while not env.done:
            env.step(rng.choice(list(Action)))
            assert _entity_multiset(env) == baseline


def test_object_count_constant_under_navigation_only():
    env = new_env(default_spec(Task.GO_TO_LOCAL, (Color.RED, EntityKind.BALL)), 21)
    before = _entity_multiset(env)
    rng = random.Random(2)
    for _ in range(30):
        if env.done:
            break
        env.step(rng.choice([Action.TURN_LEFT, Action.TURN_RIGHT, Action.GO_FORWARD]))
    assert _entity_multiset(env) == before


# ---------------------------------------------------------------------------
# Visibility: brute-force ray walk oracle
# ---------------------------------------------------------------------------

def _transparent(entity):
    if entity is None:
        return True
    if entity.kind is EntityKind.WALL:
        return False
    if entity.kind is EntityKind.DOOR:
        return entity.state is DoorState.OPEN
    return True


def _raywalk_visible(cells, pos, direction, rel):
    """Independent line-of-sight: walk the center-to-center segment through
    the grid by crossing parameters and require every strictly intermediate
    cell to be transparent."""
    target = rel_to_abs(pos, direction, *rel)
    ax, ay = Fraction(2 * pos[0] + 1, 2), Fraction(2 * pos[1] + 1, 2)
    bx, by = Fraction(2 * target[0] + 1, 2), Fraction(2 * target[1] + 1, 2)
    crossings = {Fraction(0), Fraction(1)}
    if bx != ax:
        lo, hi = sorted((ax, bx))
        k = int(lo) + 1
        while k <= hi:
            if lo < k < hi:
                crossings.add(Fraction(k - ax, bx - ax))
            k += 1
    if by != ay:
        lo, hi = sorted((ay, by))
        k = int(lo) + 1
        while k <= hi:
            if lo < k < hi:
                crossings.add(Fraction(k - ay, by - ay))
            k += 1
    ts = sorted(crossings)
    for t0, t1 in zip(ts, ts[1:]):
        mid = (t0 + t1) / 2
        px = ax + mid * (bx - ax)
        py = ay + mid * (by - ay)
        cell = (px.numerator // px.denominator, py.numerator // py.denominator)
        if cell in (tuple(pos), tuple(target)):
            continue
        if not _transparent(cells.get(Position(*cell))):
            return False
    return True


def _oracle_visible_set(env):
    out = []
    for lat in range(-VIEW_HALF, VIEW_HALF + 1):
        for fwd in range(VIEW_DEPTH):
            if (lat, fwd) == (0, 0):
                continue
            if _raywalk_visible(env.cells, env.agent_pos, env.agent_dir, (lat, fwd)):
                out.append((lat, fwd))
    return sorted(out)


def test_visible_cone_matches_raywalk_oracle():
    rng = random.Random(5)
    for trial in range(25):
        task = rng.choice([Task.GO_TO_LOCAL, Task.UNLOCK_LOCAL, Task.FIND_OBJ])
        env = new_env(_random_spec(task, random.Random(trial)), 300 + trial)
        env.reset()
        for _ in range(rng.randrange(0, 12)):
            if env.done:
                break
            env.step(rng.choice(list(Action)))
        produced = sorted(visible_rel_cells(env.cells, env.agent_pos, env.agent_dir))
        assert produced == _oracle_visible_set(env)


def test_entity_behind_closed_door_is_hidden():
    env = build_env(width=12, height=6, agent=(2, 2, "east"),
                    entities=[(5, 2, "door", "red", "closed"),
                              (8, 2, "ball", "blue")],
                    rooms=[[1, 1, 4, 4], [6, 1, 10, 4]])
    lines = env.render_text().view_lines
    assert any("red closed door" in line for line in lines)
    assert not any("blue ball" in line for line in lines)
    # opening the door reveals the ball
    env.cells[Position(5, 2)] = env.cells[Position(5, 2)]._replace(state=DoorState.OPEN)
    lines = env.render_text().view_lines
    assert any("blue ball" in line for line in lines)


def test_render_sentence_format():
    env = build_env(agent=(4, 5, "north"), entities=[(4, 3, "ball", "red")])
    lines = env.render_text().view_lines
    assert "You see a red ball 2 steps forward" in lines


def test_render_single_step_uses_singular():
    env = build_env(agent=(4, 5, "north"), entities=[(3, 5, "key", "green")])
    lines = env.render_text().view_lines
    assert "You see a green key 1 step left" in lines


def test_render_direction_phrases_cover_the_five_classes():
    env = build_env(agent=(4, 5, "north"),
                    entities=[(4, 3, "ball", "red"),
                              (2, 5, "key", "green"),
                              (6, 5, "box", "blue"),
                              (2, 3, "ball", "yellow"),
                              (6, 3, "box", "purple")])
    lines = env.render_text().view_lines
    assert "You see a red ball 2 steps forward" in lines
    assert "You see a green key 2 steps left" in lines
    assert "You see a blue box 2 steps right" in lines
    assert "You see a yellow ball 2 steps left and forward" in lines
    assert "You see a purple box 2 steps right and forward" in lines


def test_carried_item_reported_separately():
    env = build_env(agent=(4, 4, "north"), carrying=("purple", "key"))
    obs = env.render_text()
    assert obs.carrying == (Color.PURPLE, EntityKind.KEY)
    assert "You carry a purple key" in obs.body_text()
    assert not any("purple key" in line for line in obs.view_lines)


def test_no_view_line_outside_cone_or_occluded():
    rng = random.Random(9)
    for trial in range(10):
        env = new_env(_random_spec(Task.FIND_OBJ, random.Random(trial)), 900 + trial)
        env.reset()
        for _ in range(15):
            if env.done:
                break
            env.step(rng.choice(list(Action)))
        visible = set(visible_rel_cells(env.cells, env.agent_pos, env.agent_dir))
        names = []
        for rel in visible:
            entity = env.cells.get(rel_to_abs(env.agent_pos, env.agent_dir, *rel))
            if entity is not None and entity.kind is not EntityKind.WALL:
                if entity.kind is EntityKind.DOOR:
                    names.append(f"{entity.color.value} {entity.state.value} door")
                else:
                    names.append(f"{entity.color.value} {entity.kind.value}")
        for line in env.render_text().view_lines:
            if "wall" in line:
                continue
            assert any(name in line for name in names), line


# ---------------------------------------------------------------------------
# Ground truth and planner
# ---------------------------------------------------------------------------

def test_ground_truth_tracks_pickup():
    env = build_env(task="PickupLocal", target=("blue", "ball"),
                    agent=(4, 4, "north"),
                    entities=[(4, 3, "ball", "blue"), (2, 2, "key", "red")])
    before = env.ground_truth()
    assert before.carrying is None
    env.step(Action.PICK_UP)
    after = env.ground_truth()
    assert after.carrying == (Color.BLUE, EntityKind.BALL)
    assert Position(4, 3) not in after.cells
    assert (Color.BLUE, EntityKind.BALL) not in after.room_objects[0]


def test_ground_truth_render_roundtrip():
    env = new_env(default_spec(Task.GO_TO_LOCAL, (Color.BLUE, EntityKind.KEY)), 17)
    state = env.ground_truth()
    from epigrid.gridworld import render_view_lines
    assert render_view_lines(state.cells, state.agent_pos, state.agent_dir) \
        == env.render_text().view_lines


def _independent_bfs_steps(env):
    """Brute-force shortest path to face the target; (pos, dir) state space."""
    from collections import deque
    target = env.spec.target
    start = (env.agent_pos, env.agent_dir)
    queue = deque([(start, 0)])
    seen = {start}
    while queue:
        (pos, direction), dist = queue.popleft()
        front = rel_to_abs(pos, direction, 0, 1)
        entity = env.cells.get(front)
        if entity is not None and (entity.color, entity.kind) == target:
            return dist
        candidates = []
        from epigrid.gridworld import turn_left, turn_right
        candidates.append((pos, turn_left(direction)))
        candidates.append((pos, turn_right(direction)))
        if env.cells.get(front) is None and 0 <= front.x < env.width \
                and 0 <= front.y < env.height:
            candidates.append((front, direction))
        for nxt in candidates:
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, dist + 1))
    return None


def test_optimal_episode_reward_matches_bfs():
    for trial in range(8):
        env = new_env(_random_spec(Task.GO_TO_LOCAL, random.Random(trial)), 400 + trial)
        k_star = _independent_bfs_steps(env)
        assert k_star is not None and k_star >= 1
        plan = plan_episode(env)
        assert plan is not None and len(plan) == k_star
        env.reset()
        result = None
        for action in plan:
            result = env.step(action)
        assert result.success
        assert result.reward == pytest.approx(1.0 - 0.9 * k_star / env.spec.max_steps)


def test_generated_layouts_are_solvable():
    for trial in range(12):
        task = [Task.GO_TO_LOCAL, Task.PICKUP_LOCAL, Task.UNLOCK_LOCAL,
                Task.FIND_OBJ][trial % 4]
        env = new_env(_random_spec(task, random.Random(trial)), 500 + trial)
        plan = plan_episode(env)
        assert plan is not None
        assert len(plan) <= env.spec.max_steps
        env.reset()
        result = None
        for action in plan:
            result = env.step(action)
        assert result.success, f"{task} plan did not succeed"


def test_unlock_plan_picks_key_before_door():
    env = new_env(default_spec(Task.UNLOCK_LOCAL, (Color.RED, EntityKind.DOOR)), 8)
    plan = plan_episode(env)
    assert plan.index(Action.PICK_UP) < len(plan) - 1
    assert plan[-1] is Action.TOGGLE


# ---------------------------------------------------------------------------
# Snapshots and splits
# ---------------------------------------------------------------------------

def test_snapshot_roundtrip_preserves_behavior():
    env = new_env(default_spec(Task.UNLOCK_LOCAL, (Color.GREEN, EntityKind.DOOR)), 13)
    env.reset()
    env.step(Action.TURN_LEFT)
    snapshot = env.to_json()
    clone = Environment.from_json(snapshot)
    assert clone.to_json() == snapshot
    rng_a, rng_b = random.Random(1), random.Random(1)
    for _ in range(20):
        if env.done:
            break
        ra = env.step(rng_a.choice(list(Action)))
        rb = clone.step(rng_b.choice(list(Action)))
        assert (ra.reward, ra.done, ra.success) == (rb.reward, rb.done, rb.success)
        assert ra.observation == rb.observation


def test_snapshot_rejects_unknown_format():
    env = new_env(default_spec(Task.GO_TO_LOCAL, (Color.RED, EntityKind.BALL)), 1)
    payload = json.loads(env.to_json())
    payload["format"] = "something-else"
    with pytest.raises(ValueError):
        Environment.from_json(json.dumps(payload))


def test_held_out_pairs_are_a_fifth_of_universe():
    assert len(HELD_OUT_OBJECT_PAIRS) == 4  # 20% of 18, rounded
    assert not HELD_OUT_OBJECT_PAIRS & set(SEEN_OBJECT_PAIRS)


def test_no_change_layouts_never_contain_held_out_pairs():
    for trial in range(15):
        spec = sample_task_spec(Task.GO_TO_LOCAL, random.Random(trial), split="no_change")
        env = new_env(spec, 700 + trial)
        present = {(e.color, e.kind) for e in env.cells.values()
                   if e.kind in (EntityKind.KEY, EntityKind.BALL, EntityKind.BOX)}
        assert not present & HELD_OUT_OBJECT_PAIRS


def test_new_object_split_targets_held_out_pair():
    for trial in range(10):
        spec = sample_task_spec(Task.GO_TO_LOCAL, random.Random(trial), split="new_object")
        assert spec.target in HELD_OUT_OBJECT_PAIRS
        env = new_env(spec, 800 + trial)
        present = {(e.color, e.kind) for e in env.cells.values()
                   if e.kind in (EntityKind.KEY, EntityKind.BALL, EntityKind.BOX)}
        assert spec.target in present


def test_generation_failure_names_constraint():
    # More distractors than the room has cells: placement must fail and the
    # error should name the task and the violated constraint.
    spec = TaskSpec(Task.UNLOCK_LOCAL, (Color.RED, EntityKind.DOOR),
                    distractors=200, max_steps=64)
    with pytest.raises(LayoutError) as err:
        new_env(spec, 3)
    assert "UnlockLocal" in str(err.value)
    assert "distractor" in str(err.value) or "free cell" in str(err.value)
