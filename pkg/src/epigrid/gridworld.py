"""Deterministic text gridworld with egocentric observations.

Four instruction-following tasks over a walled grid: navigate to a target,
pick it up, unlock a colored door, or find an object across six rooms. All
layout randomness is derived from (task spec, seed); transitions are fully
deterministic, so episodes replay bit-exactly.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Callable, NamedTuple, Optional

SNAPSHOT_FORMAT = "epigrid-env/1"

VIEW_DEPTH = 7      # forward extent of the view cone, agent row included
VIEW_HALF = 3       # lateral extent to each side


class Direction(Enum):
    NORTH = "north"
    EAST = "east"
    SOUTH = "south"
    WEST = "west"


_DIR_ORDER = (Direction.NORTH, Direction.EAST, Direction.SOUTH, Direction.WEST)
_DIR_VEC = {
    Direction.NORTH: (0, -1),
    Direction.EAST: (1, 0),
    Direction.SOUTH: (0, 1),
    Direction.WEST: (-1, 0),
}


def turn_left(d: Direction) -> Direction:
    return _DIR_ORDER[(_DIR_ORDER.index(d) - 1) % 4]


def turn_right(d: Direction) -> Direction:
    return _DIR_ORDER[(_DIR_ORDER.index(d) + 1) % 4]


class EntityKind(Enum):
    KEY = "key"
    BALL = "ball"
    BOX = "box"
    DOOR = "door"
    WALL = "wall"


CARRYABLE_KINDS = (EntityKind.KEY, EntityKind.BALL, EntityKind.BOX)


class Color(Enum):
    RED = "red"
    GREEN = "green"
    BLUE = "blue"
    PURPLE = "purple"
    YELLOW = "yellow"
    GREY = "grey"


COLORS = tuple(Color)


class DoorState(Enum):
    OPEN = "open"
    CLOSED = "closed"
    LOCKED = "locked"


class Action(Enum):
    """The six actions; definition order is the global tie-break order."""

    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    GO_FORWARD = "go_forward"
    PICK_UP = "pick_up"
    DROP = "drop"
    TOGGLE = "toggle"


ACTION_ORDER = tuple(Action)


class Task(Enum):
    GO_TO_LOCAL = "GoToLocal"
    PICKUP_LOCAL = "PickupLocal"
    UNLOCK_LOCAL = "UnlockLocal"
    FIND_OBJ = "FindObj"


SINGLE_ROOM_TASKS = (Task.GO_TO_LOCAL, Task.PICKUP_LOCAL, Task.UNLOCK_LOCAL)

# Target universe for object tasks: carryable kinds x full palette (18 pairs).
ALL_OBJECT_PAIRS = tuple(
    (color, kind) for kind in CARRYABLE_KINDS for color in COLORS
)

# Frozen 20% holdout of the 18 object pairs, reserved for new-object
# evaluation; these pairs never appear in standard-split layouts.
HELD_OUT_OBJECT_PAIRS = frozenset(
    {
        (Color.PURPLE, EntityKind.BALL),
        (Color.YELLOW, EntityKind.BOX),
        (Color.GREEN, EntityKind.KEY),
        (Color.GREY, EntityKind.BALL),
    }
)

# Door-color holdout for the unlock task's new-object split.
HELD_OUT_DOOR_COLORS = frozenset({Color.PURPLE})

SEEN_OBJECT_PAIRS = tuple(
    p for p in ALL_OBJECT_PAIRS if p not in HELD_OUT_OBJECT_PAIRS
)
SEEN_DOOR_COLORS = tuple(c for c in COLORS if c not in HELD_OUT_DOOR_COLORS)


class Position(NamedTuple):
    x: int
    y: int


class Entity(NamedTuple):
    kind: EntityKind
    color: Optional[Color]
    state: Optional[DoorState] = None


class LayoutError(Exception):
    """Layout generation could not satisfy a placement constraint."""


class EpisodeOver(RuntimeError):
    """step() called after the episode already ended."""


@dataclass(frozen=True)
class TaskSpec:
    task: Task
    target: tuple[Color, EntityKind]
    rooms: int = 1
    distractors: int = 8
    max_steps: int = 64

    def validate(self) -> None:
        color, kind = self.target
        if self.max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if self.task in (Task.GO_TO_LOCAL, Task.PICKUP_LOCAL):
            if self.rooms != 1 or self.distractors != 8:
                raise ValueError(f"{self.task.value} is single-room with exactly 8 distractors")
            if kind not in CARRYABLE_KINDS:
                raise ValueError("target must be a carryable object")
        elif self.task is Task.UNLOCK_LOCAL:
            if self.rooms != 1:
                raise ValueError("UnlockLocal is single-room")
            if kind is not EntityKind.DOOR:
                raise ValueError("UnlockLocal target must be a door")
        elif self.task is Task.FIND_OBJ:
            if self.rooms != 6:
                raise ValueError("FindObj spans 6 rooms")
            if kind not in CARRYABLE_KINDS:
                raise ValueError("target must be a carryable object")


def default_spec(task: Task, target: tuple[Color, EntityKind], max_steps: Optional[int] = None) -> TaskSpec:
    """Spec with per-task defaults filled in (room count, step budget)."""
    if task is Task.FIND_OBJ:
        spec = TaskSpec(task, target, rooms=6, distractors=8, max_steps=max_steps or 320)
    else:
        spec = TaskSpec(task, target, rooms=1, distractors=8, max_steps=max_steps or 64)
    spec.validate()
    return spec


def sample_task_spec(task: Task, rng: random.Random, split: str = "no_change",
                     max_steps: Optional[int] = None) -> TaskSpec:
    """Draw a target for the task under the requested evaluation split."""
    if split not in ("no_change", "new_object"):
        raise ValueError(f"unknown split {split!r}")
    if task is Task.UNLOCK_LOCAL:
        pool = sorted(HELD_OUT_DOOR_COLORS, key=lambda c: c.value) if split == "new_object" \
            else sorted(SEEN_DOOR_COLORS, key=lambda c: c.value)
        target = (rng.choice(pool), EntityKind.DOOR)
    else:
        pool = sorted(HELD_OUT_OBJECT_PAIRS, key=lambda p: (p[0].value, p[1].value)) \
            if split == "new_object" else list(SEEN_OBJECT_PAIRS)
        target = rng.choice(pool)
    return default_spec(task, target, max_steps=max_steps)


def mission_text(spec: TaskSpec) -> str:
    color, kind = spec.target
    phrase = f"{color.value} {kind.value}"
    if spec.task is Task.GO_TO_LOCAL:
        return f"go to the {phrase}"
    if spec.task is Task.PICKUP_LOCAL:
        return f"pick up the {phrase}"
    if spec.task is Task.UNLOCK_LOCAL:
        return f"unlock the {phrase}"
    return f"find the {phrase}"


@dataclass
class Observation:
    mission: str
    view_lines: list[str]
    carrying: Optional[tuple[Color, EntityKind]]

    def body_text(self) -> str:
        lines = list(self.view_lines)
        if self.carrying is not None:
            color, kind = self.carrying
            lines.append(f"You carry a {color.value} {kind.value}")
        if not lines:
            lines.append("You see nothing notable")
        return "\n".join(lines)


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    success: bool


@dataclass(frozen=True)
class RoomRect:
    """Interior rectangle of one room, walls excluded; bounds inclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, pos: tuple[int, int]) -> bool:
        return self.x0 <= pos[0] <= self.x1 and self.y0 <= pos[1] <= self.y1


@dataclass
class FullState:
    """Ground-truth snapshot; read-only, never fed to the text encoder path."""

    width: int
    height: int
    cells: dict[Position, Entity]
    agent_pos: Position
    agent_dir: Direction
    carrying: Optional[tuple[Color, EntityKind]]
    door_states: dict[Position, DoorState]
    rooms: tuple[RoomRect, ...]
    room_objects: dict[int, list[tuple[Color, EntityKind]]]
    steps_used: int
    max_steps: int

    def room_index(self, pos: tuple[int, int]) -> Optional[int]:
        for i, rect in enumerate(self.rooms):
            if rect.contains(pos):
                return i
        return None


# ---------------------------------------------------------------------------
# Line-of-sight geometry
# ---------------------------------------------------------------------------

def _open_box_crossed(px: int, py: int, qx: int, qy: int,
                      x0: int, x1: int, y0: int, y1: int) -> bool:
    # Does the segment P->Q enter the open box (x0,x1) x (y0,y1)? Exact
    # rational clipping; a touch at a corner or edge does not count.
    dx, dy = qx - px, qy - py
    lo, hi = Fraction(0), Fraction(1)
    for p, d, a, b in ((px, dx, x0, x1), (py, dy, y0, y1)):
        if d == 0:
            if not (a < p < b):
                return False
        else:
            t1 = Fraction(a - p, d)
            t2 = Fraction(b - p, d)
            if t1 > t2:
                t1, t2 = t2, t1
            lo = max(lo, t1)
            hi = min(hi, t2)
    return lo < hi


def _build_los_blockers() -> dict[tuple[int, int], tuple[tuple[int, int], ...]]:
    # For every view-cone cell (lat, fwd), the cells strictly between it and
    # the agent along the center-to-center sight line. Doubled coordinates
    # keep all arithmetic integral: cell (a, b) owns the box (2a, 2a+2) x
    # (2b, 2b+2) and has center (2a+1, 2b+1).
    table: dict[tuple[int, int], tuple[tuple[int, int], ...]] = {}
    for lat in range(-VIEW_HALF, VIEW_HALF + 1):
        for fwd in range(VIEW_DEPTH):
            if (lat, fwd) == (0, 0):
                continue
            blockers = []
            for bl in range(min(0, lat), max(0, lat) + 1):
                for bf in range(fwd + 1):
                    if (bl, bf) in ((0, 0), (lat, fwd)):
                        continue
                    if _open_box_crossed(1, 1, 2 * lat + 1, 2 * fwd + 1,
                                         2 * bl, 2 * bl + 2, 2 * bf, 2 * bf + 2):
                        blockers.append((bl, bf))
            table[(lat, fwd)] = tuple(blockers)
    return table


_LOS_BLOCKERS = _build_los_blockers()

# Render order: nearest first, then by depth, then left to right.
_VIEW_ORDER = sorted(
    ((lat, fwd) for lat in range(-VIEW_HALF, VIEW_HALF + 1) for fwd in range(VIEW_DEPTH)
     if (lat, fwd) != (0, 0)),
    key=lambda c: (max(abs(c[0]), c[1]), c[1], c[0]),
)


def direction_phrase(lat: int, fwd: int) -> str:
    if lat == 0:
        return "forward"
    side = "left" if lat < 0 else "right"
    if fwd == 0:
        return side
    return f"{side} and forward"


def view_distance(lat: int, fwd: int) -> int:
    return max(abs(lat), fwd)


def _is_transparent(entity: Optional[Entity]) -> bool:
    if entity is None:
        return True
    if entity.kind is EntityKind.WALL:
        return False
    if entity.kind is EntityKind.DOOR:
        return entity.state is DoorState.OPEN
    return True


def _is_walkable(entity: Optional[Entity]) -> bool:
    if entity is None:
        return True
    if entity.kind is EntityKind.DOOR:
        return entity.state is DoorState.OPEN
    return False


def rel_to_abs(pos: tuple[int, int], direction: Direction, lat: int, fwd: int) -> Position:
    fx, fy = _DIR_VEC[direction]
    rx, ry = _DIR_VEC[turn_right(direction)]
    return Position(pos[0] + fwd * fx + lat * rx, pos[1] + fwd * fy + lat * ry)


def visible_rel_cells(cells: dict[Position, Entity], pos: tuple[int, int],
                      direction: Direction) -> list[tuple[int, int]]:
    """View-cone cells with clear line of sight, in render order."""
    out = []
    transparent: dict[tuple[int, int], bool] = {}

    def rel_transparent(rel: tuple[int, int]) -> bool:
        cached = transparent.get(rel)
        if cached is None:
            cached = _is_transparent(cells.get(rel_to_abs(pos, direction, *rel)))
            transparent[rel] = cached
        return cached

    for rel in _VIEW_ORDER:
        if all(rel_transparent(b) for b in _LOS_BLOCKERS[rel]):
            out.append(rel)
    return out


def render_view_lines(cells: dict[Position, Entity], pos: tuple[int, int],
                      direction: Direction) -> list[str]:
    """Egocentric sentences for everything visible in the 7x7 cone.

    Objects and doors get one sentence each; walls are summarized as the
    nearest visible wall straight ahead, straight left, and straight right.
    """
    lines = []
    wall_seen = {"forward": False, "left": False, "right": False}
    for lat, fwd in visible_rel_cells(cells, pos, direction):
        entity = cells.get(rel_to_abs(pos, direction, lat, fwd))
        if entity is None:
            continue
        phrase = direction_phrase(lat, fwd)
        dist = view_distance(lat, fwd)
        unit = "step" if dist == 1 else "steps"
        if entity.kind is EntityKind.WALL:
            if phrase in wall_seen and not wall_seen[phrase]:
                wall_seen[phrase] = True
                lines.append(f"You see a wall {dist} {unit} {phrase}")
            continue
        if entity.kind is EntityKind.DOOR:
            desc = f"{entity.color.value} {entity.state.value} door"
        else:
            desc = f"{entity.color.value} {entity.kind.value}"
        lines.append(f"You see a {desc} {dist} {unit} {phrase}")
    return lines


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

_GENERATION_ATTEMPTS = 64


class Environment:
    """One seeded task instance. Layout is fixed at construction; reset
    restores it bit-exactly."""

    def __init__(self, spec: TaskSpec, seed: int):
        spec.validate()
        self.spec = spec
        self.seed = seed
        self.mission = mission_text(spec)
        self._generate()
        self._snapshot_initial()
        self.reset()

    # -- generation -------------------------------------------------------

    def _generate(self) -> None:
        last_failure = "no attempt made"
        for attempt in range(_GENERATION_ATTEMPTS):
            rng = random.Random(f"layout:{self.seed & 0xFFFFFFFFFFFFFFFF}:{self.spec.task.value}:{attempt}")
            try:
                self._try_layout(rng)
            except LayoutError as exc:
                last_failure = str(exc)
                continue
            return
        raise LayoutError(
            f"could not generate {self.spec.task.value} layout for seed {self.seed}: {last_failure}"
        )

    def _try_layout(self, rng: random.Random) -> None:
        if self.spec.task is Task.FIND_OBJ:
            self._layout_multi_room(rng)
        else:
            self._layout_single_room(rng)
        if self._success_predicate():
            raise LayoutError("initial pose already satisfies the task")
        if self.spec.task in (Task.GO_TO_LOCAL, Task.FIND_OBJ) and self._facing_target():
            raise LayoutError("agent starts facing the target")
        if self.spec.task is Task.FIND_OBJ and not self._all_rooms_reachable():
            raise LayoutError("an object placement sealed off a room")
        if not self._solvable():
            raise LayoutError("no solution within the step budget")

    def _distractor_pool(self) -> list[tuple[Color, EntityKind]]:
        pool = [p for p in SEEN_OBJECT_PAIRS if p != self.spec.target]
        if self.spec.task is Task.UNLOCK_LOCAL:
            # Exactly one key matches the door; other keys stay decoys.
            pool = [p for p in pool if p != (self.spec.target[0], EntityKind.KEY)]
        return pool

    def _layout_single_room(self, rng: random.Random) -> None:
        interior = 8
        self.width = interior + 2
        self.height = interior + 2
        self.rooms = (RoomRect(1, 1, interior, interior),)
        cells: dict[Position, Entity] = {}
        for x in range(self.width):
            cells[Position(x, 0)] = Entity(EntityKind.WALL, Color.GREY)
            cells[Position(x, self.height - 1)] = Entity(EntityKind.WALL, Color.GREY)
        for y in range(self.height):
            cells[Position(0, y)] = Entity(EntityKind.WALL, Color.GREY)
            cells[Position(self.width - 1, y)] = Entity(EntityKind.WALL, Color.GREY)

        free = [Position(x, y) for y in range(1, interior + 1) for x in range(1, interior + 1)]
        rng.shuffle(free)
        self.target_pos: Optional[Position] = None

        if self.spec.task is Task.UNLOCK_LOCAL:
            color = self.spec.target[0]
            side = rng.choice(("north", "south", "west", "east"))
            offset = rng.randrange(1, interior + 1)
            if side == "north":
                door_pos = Position(offset, 0)
            elif side == "south":
                door_pos = Position(offset, self.height - 1)
            elif side == "west":
                door_pos = Position(0, offset)
            else:
                door_pos = Position(self.width - 1, offset)
            cells[door_pos] = Entity(EntityKind.DOOR, color, DoorState.LOCKED)
            self.target_pos = door_pos
            cells[free.pop()] = Entity(EntityKind.KEY, color)
        else:
            pos = free.pop()
            cells[pos] = Entity(self.spec.target[1], self.spec.target[0])
            self.target_pos = pos

        pool = self._distractor_pool()
        for _ in range(self.spec.distractors):
            if not free:
                raise LayoutError("room too small for distractor placement")
            color, kind = rng.choice(pool)
            cells[free.pop()] = Entity(kind, color)

        if not free:
            raise LayoutError("no free cell left for the agent")
        self.agent_pos = free.pop()
        self.agent_dir = rng.choice(_DIR_ORDER)
        self.cells = cells
        self.carrying: Optional[tuple[Color, EntityKind]] = None
        self.steps_used = 0
        self.done = False
        self.success = False
        self.visited_rooms = {0}

    def _layout_multi_room(self, rng: random.Random) -> None:
        room, cols, rows_n = 6, 3, 2
        self.width = cols * room + cols + 1
        self.height = rows_n * room + rows_n + 1
        rooms = []
        for ry in range(rows_n):
            for rx in range(cols):
                x0 = rx * (room + 1) + 1
                y0 = ry * (room + 1) + 1
                rooms.append(RoomRect(x0, y0, x0 + room - 1, y0 + room - 1))
        self.rooms = tuple(rooms)

        cells: dict[Position, Entity] = {}
        for y in range(self.height):
            for x in range(self.width):
                if x % (room + 1) == 0 or y % (room + 1) == 0:
                    cells[Position(x, y)] = Entity(EntityKind.WALL, Color.GREY)

        # Neighboring-room pairs; a spanning tree guarantees connectivity and
        # leftover walls get doors with probability 0.4.
        def room_id(rx: int, ry: int) -> int:
            return ry * cols + rx

        adjacencies = []
        for ry in range(rows_n):
            for rx in range(cols):
                if rx + 1 < cols:
                    adjacencies.append((room_id(rx, ry), room_id(rx + 1, ry), "v", rx, ry))
                if ry + 1 < rows_n:
                    adjacencies.append((room_id(rx, ry), room_id(rx, ry + 1), "h", rx, ry))
        rng.shuffle(adjacencies)
        parent = list(range(len(rooms)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        chosen = []
        for edge in adjacencies:
            a, b = find(edge[0]), find(edge[1])
            if a != b:
                parent[a] = b
                chosen.append(edge)
        for edge in adjacencies:
            if edge not in chosen and rng.random() < 0.4:
                chosen.append(edge)

        door_cells = []
        for _, _, orient, rx, ry in chosen:
            if orient == "v":
                x = (rx + 1) * (room + 1)
                y = ry * (room + 1) + 1 + rng.randrange(room)
            else:
                x = rx * (room + 1) + 1 + rng.randrange(room)
                y = (ry + 1) * (room + 1)
            cells[Position(x, y)] = Entity(
                EntityKind.DOOR, rng.choice(COLORS), DoorState.CLOSED
            )
            door_cells.append(Position(x, y))

        # Keep doorways clear: an object right in front of a door would wall
        # off the room behind it.
        doorway = {
            Position(d.x + dx, d.y + dy)
            for d in door_cells
            for dx, dy in ((0, 1), (0, -1), (1, 0), (-1, 0))
        }
        free = [
            Position(x, y)
            for rect in rooms
            for y in range(rect.y0, rect.y1 + 1)
            for x in range(rect.x0, rect.x1 + 1)
            if Position(x, y) not in doorway
        ]
        rng.shuffle(free)
        pos = free.pop()
        cells[pos] = Entity(self.spec.target[1], self.spec.target[0])
        self.target_pos = pos
        pool = self._distractor_pool()
        for _ in range(self.spec.distractors):
            color, kind = rng.choice(pool)
            cells[free.pop()] = Entity(kind, color)
        self.agent_pos = free.pop()
        self.agent_dir = rng.choice(_DIR_ORDER)
        self.cells = cells
        self.carrying = None
        self.steps_used = 0
        self.done = False
        self.success = False
        self.visited_rooms = {self.room_index(self.agent_pos)}

    def _snapshot_initial(self) -> None:
        self._initial = (
            dict(self.cells),
            self.agent_pos,
            self.agent_dir,
            self.carrying,
        )

    # -- core API ---------------------------------------------------------

    def reset(self) -> Observation:
        cells, pos, direction, carrying = self._initial
        self.cells = dict(cells)
        self.agent_pos = pos
        self.agent_dir = direction
        self.carrying = carrying
        self.steps_used = 0
        self.done = False
        self.success = False
        self.visited_rooms = {self.room_index(pos)}
        return self.render_text()

    def step(self, action: Action) -> StepResult:
        if self.done:
            raise EpisodeOver("episode is over; call reset() before stepping again")
        self.steps_used += 1
        front = self._front_pos()
        front_entity = self.cells.get(front)

        if action is Action.TURN_LEFT:
            self.agent_dir = turn_left(self.agent_dir)
        elif action is Action.TURN_RIGHT:
            self.agent_dir = turn_right(self.agent_dir)
        elif action is Action.GO_FORWARD:
            if _is_walkable(front_entity):
                self.agent_pos = front
                room = self.room_index(front)
                if room is not None:
                    self.visited_rooms.add(room)
        elif action is Action.PICK_UP:
            if (front_entity is not None and front_entity.kind in CARRYABLE_KINDS
                    and self.carrying is None):
                self.carrying = (front_entity.color, front_entity.kind)
                del self.cells[front]
        elif action is Action.DROP:
            if (self.carrying is not None and front_entity is None
                    and 0 <= front.x < self.width and 0 <= front.y < self.height):
                color, kind = self.carrying
                self.cells[front] = Entity(kind, color)
                self.carrying = None
        elif action is Action.TOGGLE:
            if front_entity is not None and front_entity.kind is EntityKind.DOOR:
                if front_entity.state is DoorState.OPEN:
                    self.cells[front] = front_entity._replace(state=DoorState.CLOSED)
                elif front_entity.state is DoorState.CLOSED:
                    self.cells[front] = front_entity._replace(state=DoorState.OPEN)
                elif (front_entity.state is DoorState.LOCKED and self.carrying is not None
                      and self.carrying == (front_entity.color, EntityKind.KEY)):
                    self.cells[front] = front_entity._replace(state=DoorState.OPEN)
        else:
            raise ValueError(f"unknown action {action!r}")

        self.success = self._success_predicate()
        reward = 0.0
        if self.success:
            reward = 1.0 - 0.9 * (self.steps_used / self.spec.max_steps)
            self.done = True
        elif self.steps_used >= self.spec.max_steps:
            self.done = True
        return StepResult(self.render_text(), reward, self.done, self.success)

    def render_text(self) -> Observation:
        return Observation(
            mission=self.mission,
            view_lines=render_view_lines(self.cells, self.agent_pos, self.agent_dir),
            carrying=self.carrying,
        )

    def ground_truth(self) -> FullState:
        cells = dict(self.cells)
        door_states = {
            pos: e.state for pos, e in cells.items() if e.kind is EntityKind.DOOR
        }
        room_objects: dict[int, list[tuple[Color, EntityKind]]] = {
            i: [] for i in range(len(self.rooms))
        }
        for pos, e in cells.items():
            if e.kind in CARRYABLE_KINDS:
                room = self.room_index(pos)
                if room is not None:
                    room_objects[room].append((e.color, e.kind))
        for objs in room_objects.values():
            objs.sort(key=lambda p: (p[0].value, p[1].value))
        return FullState(
            width=self.width,
            height=self.height,
            cells=cells,
            agent_pos=self.agent_pos,
            agent_dir=self.agent_dir,
            carrying=self.carrying,
            door_states=door_states,
            rooms=self.rooms,
            room_objects=room_objects,
            steps_used=self.steps_used,
            max_steps=self.spec.max_steps,
        )

    # -- helpers ----------------------------------------------------------

    def _front_pos(self) -> Position:
        dx, dy = _DIR_VEC[self.agent_dir]
        return Position(self.agent_pos.x + dx, self.agent_pos.y + dy)

    def room_index(self, pos: tuple[int, int]) -> Optional[int]:
        for i, rect in enumerate(self.rooms):
            if rect.contains(pos):
                return i
        return None

    def _facing_target(self) -> bool:
        entity = self.cells.get(self._front_pos())
        if entity is None:
            return False
        return (entity.color, entity.kind) == (self.spec.target[0], self.spec.target[1]) \
            if entity.kind is not EntityKind.DOOR \
            else (self.spec.target[1] is EntityKind.DOOR and entity.color == self.spec.target[0])

    def _success_predicate(self) -> bool:
        if self.spec.task in (Task.GO_TO_LOCAL, Task.FIND_OBJ):
            entity = self.cells.get(self._front_pos())
            return entity is not None and entity.kind is self.spec.target[1] \
                and entity.color == self.spec.target[0]
        if self.spec.task is Task.PICKUP_LOCAL:
            return self.carrying == self.spec.target
        door = self.cells.get(self.target_pos) if self.target_pos else None
        return door is not None and door.kind is EntityKind.DOOR \
            and door.state is DoorState.OPEN

    def _all_rooms_reachable(self) -> bool:
        from collections import deque
        seen = {self.agent_pos}
        queue = deque([self.agent_pos])
        rooms = set()
        while queue:
            pos = queue.popleft()
            room = self.room_index(pos)
            if room is not None:
                rooms.add(room)
            for dx, dy in ((0, 1), (0, -1), (1, 0), (-1, 0)):
                nxt = Position(pos.x + dx, pos.y + dy)
                if nxt in seen or not (0 <= nxt.x < self.width and 0 <= nxt.y < self.height):
                    continue
                entity = self.cells.get(nxt)
                if entity is None or (entity.kind is EntityKind.DOOR
                                      and entity.state is not DoorState.LOCKED):
                    seen.add(nxt)
                    queue.append(nxt)
        return len(rooms) == len(self.rooms)

    def _solvable(self) -> bool:
        plan = plan_episode(self)
        return plan is not None and len(plan) <= self.spec.max_steps

    # -- snapshot I/O -------------------------------------------------------

    def to_json(self) -> str:
        cells = [
            [pos.x, pos.y, e.kind.value, e.color.value if e.color else None,
             e.state.value if e.state else None]
            for pos, e in sorted(self.cells.items())
        ]
        payload = {
            "format": SNAPSHOT_FORMAT,
            "spec": {
                "task": self.spec.task.value,
                "target": [self.spec.target[0].value, self.spec.target[1].value],
                "rooms": self.spec.rooms,
                "distractors": self.spec.distractors,
                "max_steps": self.spec.max_steps,
            },
            "seed": self.seed,
            "width": self.width,
            "height": self.height,
            "rooms": [[r.x0, r.y0, r.x1, r.y1] for r in self.rooms],
            "cells": cells,
            "agent": {"x": self.agent_pos.x, "y": self.agent_pos.y,
                      "dir": self.agent_dir.value},
            "carrying": [self.carrying[0].value, self.carrying[1].value]
            if self.carrying else None,
            "target_pos": [self.target_pos.x, self.target_pos.y] if self.target_pos else None,
            "steps_used": self.steps_used,
            "done": self.done,
            "success": self.success,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Environment":
        payload = json.loads(text)
        if payload.get("format") != SNAPSHOT_FORMAT:
            raise ValueError(f"unsupported snapshot format {payload.get('format')!r}")
        spec = TaskSpec(
            task=Task(payload["spec"]["task"]),
            target=(Color(payload["spec"]["target"][0]), EntityKind(payload["spec"]["target"][1])),
            rooms=payload["spec"]["rooms"],
            distractors=payload["spec"]["distractors"],
            max_steps=payload["spec"]["max_steps"],
        )
        env = cls.__new__(cls)
        env.spec = spec
        env.seed = payload["seed"]
        env.mission = mission_text(spec)
        env.width = payload["width"]
        env.height = payload["height"]
        env.rooms = tuple(RoomRect(*r) for r in payload["rooms"])
        env.cells = {
            Position(x, y): Entity(
                EntityKind(kind), Color(color) if color else None,
                DoorState(state) if state else None)
            for x, y, kind, color, state in payload["cells"]
        }
        env.agent_pos = Position(payload["agent"]["x"], payload["agent"]["y"])
        env.agent_dir = Direction(payload["agent"]["dir"])
        env.carrying = (
            (Color(payload["carrying"][0]), EntityKind(payload["carrying"][1]))
            if payload["carrying"] else None
        )
        env.target_pos = Position(*payload["target_pos"]) if payload["target_pos"] else None
        env.steps_used = payload["steps_used"]
        env.done = payload["done"]
        env.success = payload["success"]
        env.visited_rooms = {env.room_index(env.agent_pos)}
        env._snapshot_initial()
        return env


def new_env(spec: TaskSpec, seed: int) -> Environment:
    return Environment(spec, seed)


# ---------------------------------------------------------------------------
# Built-in planner (layout validation and optimality oracles)
# ---------------------------------------------------------------------------

def plan_to_face(env: Environment, match: Callable[[Entity], bool],
                 carrying_key: Optional[Color] = None) -> Optional[list[Action]]:
    """Cheapest action sequence ending with a matching entity straight ahead.

    Closed doors cost an extra toggle; locked doors block unless the carried
    key color matches. Deterministic tie-breaking via insertion order.
    """
    start = (env.agent_pos, env.agent_dir)
    dist = {start: 0}
    prev: dict[tuple, tuple] = {}
    counter = 0
    heap = [(0, counter, start)]

    def passable(entity: Optional[Entity]) -> Optional[list[Action]]:
        if entity is None:
            return [Action.GO_FORWARD]
        if entity.kind is EntityKind.DOOR:
            if entity.state is DoorState.OPEN:
                return [Action.GO_FORWARD]
            if entity.state is DoorState.CLOSED:
                return [Action.TOGGLE, Action.GO_FORWARD]
            if carrying_key is not None and entity.color == carrying_key:
                return [Action.TOGGLE, Action.GO_FORWARD]
        return None

    goal = None
    while heap:
        cost, _, state = heapq.heappop(heap)
        if cost > dist.get(state, 1 << 30):
            continue
        pos, direction = state
        dx, dy = _DIR_VEC[direction]
        front = Position(pos.x + dx, pos.y + dy)
        entity = env.cells.get(front)
        if entity is not None and match(entity):
            goal = state
            break
        moves: list[tuple[tuple, list[Action]]] = [
            ((pos, turn_left(direction)), [Action.TURN_LEFT]),
            ((pos, turn_right(direction)), [Action.TURN_RIGHT]),
        ]
        step_actions = passable(entity)
        if step_actions is not None and 0 <= front.x < env.width and 0 <= front.y < env.height:
            moves.append(((front, direction), step_actions))
        for nxt, actions in moves:
            ncost = cost + len(actions)
            if ncost < dist.get(nxt, 1 << 30):
                dist[nxt] = ncost
                prev[nxt] = (state, actions)
                counter += 1
                heapq.heappush(heap, (ncost, counter, nxt))
    if goal is None:
        return None
    plan: list[Action] = []
    state = goal
    while state != start:
        state, actions = prev[state]
        plan = list(actions) + plan
    return plan


def plan_episode(env: Environment) -> Optional[list[Action]]:
    """Full solution plan for the env's task, or None if unsolvable."""
    spec = env.spec
    if spec.task in (Task.GO_TO_LOCAL, Task.FIND_OBJ):
        return plan_to_face(
            env, lambda e: e.kind is spec.target[1] and e.color == spec.target[0]
        )
    if spec.task is Task.PICKUP_LOCAL:
        plan = plan_to_face(
            env, lambda e: e.kind is spec.target[1] and e.color == spec.target[0]
        )
        return None if plan is None else plan + [Action.PICK_UP]

    # Unlock: reach the key, grab it, reach the door, toggle. Planned on a
    # scratch copy so the real env state is untouched.
    color = spec.target[0]
    scratch = Environment.from_json(env.to_json())
    to_key = plan_to_face(
        scratch, lambda e: e.kind is EntityKind.KEY and e.color == color
    )
    if to_key is None:
        return None
    for action in to_key:
        scratch.step(action)
    scratch.step(Action.PICK_UP)
    to_door = plan_to_face(
        scratch,
        lambda e: e.kind is EntityKind.DOOR and e.color == color,
        carrying_key=color,
    )
    if to_door is None:
        return None
    return to_key + [Action.PICK_UP] + to_door + [Action.TOGGLE]
