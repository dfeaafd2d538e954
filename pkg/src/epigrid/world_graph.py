"""Room-level working memory of the explored world.

Rooms are nodes labeled in discovery order, traversed doors are directed
edges, and each room accumulates the objects observed inside it. Updates are
monotone: nothing recorded is ever dropped, only a door's open/closed/locked
state may be refreshed. Model-produced updates that violate this are
repaired against the prior graph and counted, never silently accepted.
"""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import dataclass, field
from typing import Optional, Union

from . import prompts
from .gridworld import (
    CARRYABLE_KINDS,
    Action,
    Color,
    DoorState,
    EntityKind,
    FullState,
    rel_to_abs,
    visible_rel_cells,
)

logger = logging.getLogger(__name__)

GRAPH_FORMAT_REQUIREMENTS = """First line: Current Room: <room label>
Then one line per room: <room label> [<item>, <item>, ...]
Then one line per triplet: (<room label>, <color> <state> door, <room label>)
Output nothing else."""

_DOOR_STATES = tuple(s.value for s in DoorState)
_COLOR_WORDS = tuple(c.value for c in Color)

RoomId = str


def room_label(index: int) -> RoomId:
    """Sequential labels: room A, room B, ..., room Z, room AA, ..."""
    letters = ""
    index += 1
    while index > 0:
        index, rem = divmod(index - 1, 26)
        letters = string.ascii_uppercase[rem] + letters
    return f"room {letters}"


class GraphParseError(ValueError):
    def __init__(self, message: str, line: Optional[str] = None):
        super().__init__(message if line is None else f"{message}: {line!r}")
        self.line = line


@dataclass(frozen=True)
class EdgeTriplet:
    subject: RoomId
    door_color: str
    door_state: str
    object: RoomId

    @property
    def relation(self) -> str:
        return f"{self.door_color} {self.door_state} door"

    def identity(self) -> tuple[RoomId, str, RoomId]:
        # Door state is refreshable metadata, not part of edge identity.
        return (self.subject, self.door_color, self.object)


@dataclass
class WorldGraph:
    nodes: list[RoomId] = field(default_factory=list)
    features: dict[RoomId, set[str]] = field(default_factory=dict)
    edges: list[EdgeTriplet] = field(default_factory=list)
    current_room: RoomId = ""
    repair_count: int = 0

    def copy(self) -> "WorldGraph":
        return WorldGraph(
            nodes=list(self.nodes),
            features={room: set(items) for room, items in self.features.items()},
            edges=list(self.edges),
            current_room=self.current_room,
            repair_count=self.repair_count,
        )

    def ensure_room(self, room: RoomId) -> None:
        if room not in self.features:
            self.nodes.append(room)
            self.features[room] = set()

    def add_edge(self, subject: RoomId, door_color: str, door_state: str,
                 obj: RoomId) -> None:
        """Insert the triplet, or refresh the door state of an existing one."""
        if subject == obj:
            raise ValueError("door edges connect two distinct rooms")
        self.ensure_room(subject)
        self.ensure_room(obj)
        new = EdgeTriplet(subject, door_color, door_state, obj)
        for i, edge in enumerate(self.edges):
            if edge.identity() == new.identity():
                self.edges[i] = new
                return
        self.edges.append(new)

    def next_label(self) -> RoomId:
        return room_label(len(self.nodes))


def init_graph() -> WorldGraph:
    graph = WorldGraph()
    graph.ensure_room(room_label(0))
    graph.current_room = room_label(0)
    return graph


def serialize(graph: WorldGraph) -> str:
    lines = [f"Current Room: {graph.current_room}"]
    for room in graph.nodes:
        items = ", ".join(sorted(graph.features.get(room, ())))
        lines.append(f"{room} [{items}]")
    for edge in graph.edges:
        lines.append(f"({edge.subject}, {edge.relation}, {edge.object})")
    return "\n".join(lines)


def graph_to_json(graph: WorldGraph) -> str:
    return json.dumps({
        "nodes": graph.nodes,
        "features": {room: sorted(items) for room, items in graph.features.items()},
        "edges": [[e.subject, e.door_color, e.door_state, e.object] for e in graph.edges],
        "current_room": graph.current_room,
        "repair_count": graph.repair_count,
    }, sort_keys=True)


def graph_from_json(text: str) -> WorldGraph:
    payload = json.loads(text)
    graph = WorldGraph(
        nodes=list(payload["nodes"]),
        features={room: set(items) for room, items in payload["features"].items()},
        edges=[EdgeTriplet(*record) for record in payload["edges"]],
        current_room=payload["current_room"],
        repair_count=payload.get("repair_count", 0),
    )
    return graph


def build_graph_prompt(graph: WorldGraph, prev_obs: str,
                       action: Union[Action, str], new_obs: str) -> str:
    action_name = action.value if isinstance(action, Action) else str(action)
    return prompts.load_template("world_graph").format(
        world_model=serialize(graph),
        previous_observation=prev_obs,
        action=action_name,
        new_observation=new_obs,
        format_requirements=GRAPH_FORMAT_REQUIREMENTS,
    )


_ROOM_LINE = re.compile(r"^(room\s+[A-Za-z]+)\s*\[(.*)\]$")
_TRIPLET_LINE = re.compile(r"^\((.+)\)$")
_CURRENT_LINE = re.compile(r"^current\s+room\s*:\s*(.+)$", re.IGNORECASE)


def _normalize_label(raw: str) -> RoomId:
    match = re.match(r"^room\s+([A-Za-z]+)$", raw.strip(), re.IGNORECASE)
    if match is None:
        raise GraphParseError("malformed room label", raw)
    return f"room {match.group(1).upper()}"


def _parse_relation(raw: str) -> tuple[str, str]:
    words = raw.strip().lower().split()
    if "door" not in words:
        raise GraphParseError("relation must name a door", raw)
    color = next((w for w in words if w in _COLOR_WORDS), None)
    state = next((w for w in words if w in _DOOR_STATES), None)
    if color is None or state is None:
        raise GraphParseError("door relation needs a color and a state", raw)
    return color, state


def parse_graph_output(text: str, prior: WorldGraph) -> WorldGraph:
    """Parse a model-produced graph and enforce retain-all against prior.

    Dropped rooms, items, or triplets are re-added and counted as repairs.
    """
    graph = WorldGraph()
    current: Optional[RoomId] = None

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        current_match = _CURRENT_LINE.match(line)
        if current_match:
            current = _normalize_label(current_match.group(1))
            continue
        room_match = _ROOM_LINE.match(line)
        if room_match:
            room = _normalize_label(room_match.group(1))
            graph.ensure_room(room)
            for item in room_match.group(2).split(","):
                item = item.strip().lower()
                if item:
                    graph.features[room].add(item)
            continue
        triplet_match = _TRIPLET_LINE.match(line)
        if triplet_match:
            parts = [p.strip() for p in triplet_match.group(1).split(",")]
            if len(parts) != 3:
                raise GraphParseError("triplet must be (subject, relation, object)", line)
            subject = _normalize_label(parts[0])
            obj = _normalize_label(parts[2])
            color, state = _parse_relation(parts[1])
            if subject == obj:
                raise GraphParseError("triplet endpoints must differ", line)
            graph.add_edge(subject, color, state, obj)
            continue
        raise GraphParseError("unrecognized line in graph output", line)

    if current is None:
        raise GraphParseError("missing Current Room line")
    graph.ensure_room(current)
    graph.current_room = current

    repairs = 0
    for room in prior.nodes:
        if room not in graph.features:
            graph.ensure_room(room)
            repairs += 1
        for item in prior.features.get(room, ()):
            if item not in graph.features[room]:
                graph.features[room].add(item)
                repairs += 1
    existing = {edge.identity() for edge in graph.edges}
    for edge in prior.edges:
        if edge.identity() not in existing:
            graph.add_edge(edge.subject, edge.door_color, edge.door_state, edge.object)
            existing.add(edge.identity())
            repairs += 1
    if repairs:
        logger.warning("graph update dropped %d recorded item(s); repaired", repairs)
    graph.repair_count = prior.repair_count + repairs
    return graph


def is_retained(prior: WorldGraph, new: WorldGraph) -> bool:
    """True when new keeps every node, item, and edge identity of prior."""
    if not set(prior.nodes) <= set(new.nodes):
        return False
    for room in prior.nodes:
        if not prior.features.get(room, set()) <= new.features.get(room, set()):
            return False
    new_edges = {edge.identity() for edge in new.edges}
    return all(edge.identity() in new_edges for edge in prior.edges)


# ---------------------------------------------------------------------------
# Ground-truth updater
# ---------------------------------------------------------------------------

class GroundTruthGraphUpdater:
    """Mirrors graph updates from simulator snapshots for one episode.

    Tracks which simulator room carries which label; labels are assigned in
    the order rooms are entered, room A being the start room.
    """

    def __init__(self) -> None:
        self._labels: dict[int, RoomId] = {}
        self._last_room: Optional[int] = None

    def update(self, graph: WorldGraph, before: FullState, action: Action,
               after: FullState) -> WorldGraph:
        new = graph.copy()
        if not self._labels:
            start = before.room_index(before.agent_pos)
            if start is None:
                raise ValueError("episode must start inside a room")
            self._labels[start] = new.current_room
            self._last_room = start

        after_room = after.room_index(after.agent_pos)
        if after_room is not None and after_room != self._last_room:
            door = before.cells.get(before.agent_pos)
            if door is None or door.kind is not EntityKind.DOOR:
                door = after.cells.get(before.agent_pos)
            from_label = self._labels[self._last_room]
            to_label = self._labels.get(after_room)
            if to_label is None:
                to_label = new.next_label()
                self._labels[after_room] = to_label
            new.ensure_room(to_label)
            if door is not None and door.kind is EntityKind.DOOR:
                new.add_edge(from_label, door.color.value, door.state.value, to_label)
            new.current_room = to_label
            self._last_room = after_room

        current_label = self._labels[self._last_room]
        visible = visible_rel_cells(after.cells, after.agent_pos, after.agent_dir)
        for rel in visible:
            pos = rel_to_abs(after.agent_pos, after.agent_dir, *rel)
            entity = after.cells.get(pos)
            if entity is None or entity.kind not in CARRYABLE_KINDS:
                continue
            if after.room_index(pos) == self._last_room:
                new.features[current_label].add(f"{entity.color.value} {entity.kind.value}")
        return new
