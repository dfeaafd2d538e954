"""Arbitration between episodic recall and guided exploration.

Each step is classified as critical (the current target's direction is
known) or not. Critical states query the episodic memory and replay the
best remembered action; everything else explores, either through a decision
LLM fed with the world graph or through a deterministic scripted frontier
policy that needs no network.
"""

from __future__ import annotations

import random
import re
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol

from . import prompts
from .encoder import NO_OBSTACLE, StateKey, canonicalize, render_encoder_output
from .episodic_memory import EpisodicMemory
from .gridworld import ACTION_ORDER, Action, Observation
from .world_graph import WorldGraph, serialize

SOURCE_EPISODIC = "episodic"
SOURCE_LLM = "llm_policy"
SOURCE_SCRIPTED = "scripted_policy"

EXPLORE_FORMAT_REQUIREMENTS = (
    "Reply with exactly one action name from the action space and nothing else."
)

_RETRY_NOTE = "Your previous reply was not valid. {hint} (attempt {attempt})"


class Mode(Enum):
    EXPLORE = "explore"
    EXPLOIT = "exploit"


@dataclass
class DecisionTrace:
    step: int
    mode: str
    critical: bool
    key: str
    action: str
    source: str
    latency: float
    note: Optional[str] = None


class CriticalityBackend(Protocol):
    def is_critical(self, key: StateKey, observation: Optional[Observation] = None) -> bool: ...


def is_critical(key: StateKey, backend: CriticalityBackend,
                observation: Optional[Observation] = None) -> bool:
    return backend.is_critical(key, observation)


def exploit(memory: EpisodicMemory, canonical_key: str) -> Optional[Action]:
    """Best remembered action for this key, or None.

    Entries whose best stored return is not positive are treated as misses:
    they carry no evidence of success, and deterministically replaying them
    would just pin the agent to the first action in tie-break order.
    """
    best = memory.best_action(canonical_key)
    if best is None:
        return None
    action, value = best
    return action if value > 0.0 else None


class OracleCriticality:
    """Reference predicate: critical iff a target direction is known."""

    def is_critical(self, key: StateKey, observation: Optional[Observation] = None) -> bool:
        return len(key.target_directions) > 0


class LLMCriticality:
    """Asks the model for a strict yes/no on the encoded state."""

    def __init__(self, client, game_description: str, mission: str,
                 max_retries: int = 2):
        self._client = client
        self._game_description = game_description
        self._mission = mission
        self._max_retries = max_retries
        self.parse_failures = 0

    def is_critical(self, key: StateKey, observation: Optional[Observation] = None) -> bool:
        from .llm_client import ChatRequest

        prompt = prompts.load_template("critical").format(
            game_description=self._game_description,
            mission=self._mission,
            observation=render_encoder_output(key),
        )
        messages = [("user", prompt)]
        for attempt in range(self._max_retries + 1):
            reply = self._client.complete(
                ChatRequest(model=self._client.model, messages=tuple(messages))
            )
            verdict = parse_yes_no(reply)
            if verdict is not None:
                return verdict
            messages = messages + [
                ("assistant", reply),
                ("user", _RETRY_NOTE.format(hint='Output only "yes" or "no".',
                                            attempt=attempt + 1)),
            ]
        self.parse_failures += 1
        return False  # unparseable after retries counts as non-critical


def parse_yes_no(text: str) -> Optional[bool]:
    token = text.strip().strip(".!\"'").lower()
    if token == "yes":
        return True
    if token == "no":
        return False
    return None


def parse_action_reply(text: str) -> Optional[Action]:
    token = text.strip().strip(".!\"'`").lower().replace(" ", "_")
    for action in ACTION_ORDER:
        if token == action.value:
            return action
    return None


# ---------------------------------------------------------------------------
# Scripted frontier explorer
# ---------------------------------------------------------------------------

_SIGHT_RE = re.compile(r"^You see a (.+?) (\d+) steps? (forward|left|right)$")
_DIAG_SIGHT_RE = re.compile(r"^You see a (.+?) (\d+) steps? (left|right) and forward$")
_MISSION_RE = re.compile(r"^(go to|pick up|unlock|find) the (\w+) (\w+)$")

# Virtual headings mirror the simulator's turn semantics: index 0 is the
# starting facing, +1 per right turn. Vectors in an ego grid, y up-forward.
_H_VEC = ((0, 1), (1, 0), (0, -1), (-1, 0))

_BFS_LIMIT = 5000
_MAP_RADIUS = 64


class ScriptedExplorer:
    """Deterministic fallback policy: map what the agent has seen by dead
    reckoning and walk toward the nearest unexplored cell.

    Beyond the frontier rule it performs the obvious mission moves the
    decision model would make: toggling closed doors that block the way,
    grabbing the matching key and unlocking its door, and picking up the
    pickup-mission target when it is straight ahead. It never uses the
    target's position for plain go-to/find navigation.
    """

    def __init__(self, mission: str, rng: Optional[random.Random] = None,
                 deviation: float = 0.15):
        match = _MISSION_RE.match(mission.strip().lower())
        if match:
            self.goal_verb = match.group(1)
            self.target_color = match.group(2)
            self.target_kind = match.group(3)
        else:
            self.goal_verb, self.target_color, self.target_kind = "", "", ""
        # With an rng the policy occasionally deviates from its plan, which
        # diversifies the trajectories feeding episodic memory. Without one
        # (evaluation) it is fully deterministic.
        self._rng = rng
        self._deviation = deviation
        self._pos = (0, 0)
        self._heading = 0
        self._free: set[tuple[int, int]] = {(0, 0)}
        self._blocked: dict[tuple[int, int], str] = {}
        self._doors: dict[tuple[int, int], tuple[str, Optional[str]]] = {}
        self._objects: dict[tuple[int, int], tuple[str, str]] = {}
        self._visited: set[tuple[int, int]] = {(0, 0)}
        self._heading_seen = {0: 0, 1: -1, 2: -1, 3: -1}
        self._step = 0
        self._last_turn: Optional[Action] = None
        self._front_entity: Optional[tuple[str, str, Optional[str]]] = None
        self._traversed_doors: set[tuple[int, int]] = set()
        self._door_hints: set[tuple[int, int]] = set()
        self._plan: list[Action] = []
        self._replan = True

    # -- geometry -----------------------------------------------------------

    def _rel_cell(self, lat: int, fwd: int) -> tuple[int, int]:
        fx, fy = _H_VEC[self._heading]
        rx, ry = _H_VEC[(self._heading + 1) % 4]
        return (self._pos[0] + fwd * fx + lat * rx, self._pos[1] + fwd * fy + lat * ry)

    # -- sensing ------------------------------------------------------------

    def _mark_free(self, cell: tuple[int, int]) -> None:
        self._blocked.pop(cell, None)
        self._objects.pop(cell, None)
        self._free.add(cell)

    def _mark_object(self, cell: tuple[int, int], color: str, kind: str) -> None:
        if cell not in self._objects:
            self._replan = True
        self._free.discard(cell)
        self._blocked[cell] = kind
        self._objects[cell] = (color, kind)

    def _mark_door(self, cell: tuple[int, int], state: str, color: Optional[str]) -> None:
        if cell not in self._doors:
            self._replan = True
        known_color = self._doors.get(cell, (None, None))[1]
        self._doors[cell] = (state, color or known_color)
        self._blocked.pop(cell, None)
        self._free.discard(cell)

    def _add_door_hints(self, dist: int, side: str) -> None:
        sign = -1 if side == "left" else 1
        for lateral in range(1, 4):
            for fwd in range(1, 7):
                if max(lateral, fwd) != dist:
                    continue
                cell = self._rel_cell(sign * lateral, fwd)
                if cell not in self._free and cell not in self._blocked \
                        and cell not in self._doors:
                    self._door_hints.add(cell)

    def _sense(self, observation: Observation, key: StateKey) -> None:
        self._front_entity = None
        straight: dict[tuple[str, int], tuple[str, ...]] = {}
        for line in observation.view_lines:
            match = _SIGHT_RE.match(line)
            if not match:
                diag = _DIAG_SIGHT_RE.match(line)
                if diag and diag.group(1).split()[-1] == "door":
                    self._add_door_hints(int(diag.group(2)), diag.group(3))
                continue
            words = tuple(match.group(1).split())
            straight[(match.group(3), int(match.group(2)))] = words

        rays = {"forward": lambda d: self._rel_cell(0, d),
                "left": lambda d: self._rel_cell(-d, 0),
                "right": lambda d: self._rel_cell(d, 0)}
        occupied: dict[str, set[int]] = {"forward": set(), "left": set(), "right": set()}
        for (phrase, dist), words in straight.items():
            cell = rays[phrase](dist)
            occupied[phrase].add(dist)
            if words == ("wall",):
                self._blocked[cell] = "wall"
                self._free.discard(cell)
            elif words[-1] == "door" and len(words) == 3:
                self._mark_door(cell, state=words[1], color=words[0])
                if phrase == "forward" and dist == 1:
                    self._front_entity = (words[0], "door", words[1])
            elif len(words) == 2:
                self._mark_object(cell, color=words[0], kind=words[1])
                if phrase == "forward" and dist == 1:
                    self._front_entity = (words[0], words[1], None)
        for (phrase, dist), words in straight.items():
            if words != ("wall",):
                continue
            for d in range(1, dist):
                if d not in occupied[phrase]:
                    self._mark_free(rays[phrase](d))

        probe_cells = {"forward-1": self._rel_cell(0, 1),
                       "left-1": self._rel_cell(-1, 0),
                       "right-1": self._rel_cell(1, 0)}
        for probe, token in key.obstacle_map().items():
            cell = probe_cells[probe]
            if token == NO_OBSTACLE:
                if cell not in self._doors:
                    self._mark_free(cell)
                else:
                    self._doors[cell] = ("open", self._doors[cell][1])
            elif token == "wall":
                self._blocked[cell] = "wall"
                self._free.discard(cell)
            elif token in ("closed door", "locked door"):
                self._mark_door(cell, state=token.split()[0], color=None)
            else:
                if cell not in self._objects:
                    self._mark_object(cell, color="", kind=token)

    # -- decision -----------------------------------------------------------

    def choose(self, observation: Observation, key: StateKey,
               graph: Optional[WorldGraph] = None) -> Action:
        self._step += 1
        self._heading_seen[self._heading] = self._step
        self._sense(observation, key)
        carrying = observation.carrying
        action = self._finishing_move(carrying)
        if action is None:
            if self._rng is not None and self._rng.random() < self._deviation:
                action = self._random_move()
            else:
                action = self._navigate(carrying)
        self._apply(action, key)
        return action

    def observe_external(self, observation: Observation, key: StateKey,
                         action: Action) -> None:
        """Keep dead reckoning honest for steps decided by someone else
        (episodic memory or the decision model)."""
        self._step += 1
        self._heading_seen[self._heading] = self._step
        self._sense(observation, key)
        self._replan = True
        self._apply(action, key)

    def _random_move(self) -> Action:
        front = self._rel_cell(0, 1)
        door = self._doors.get(front)
        front_open = front not in self._blocked and (door is None or door[0] == "open")
        pool = [Action.TURN_LEFT, Action.TURN_RIGHT]
        if front_open:
            pool += [Action.GO_FORWARD, Action.GO_FORWARD]
        self._replan = True
        return self._rng.choice(pool)

    def _carrying_target_key(self, carrying) -> bool:
        return (carrying is not None and carrying[1].value == "key"
                and carrying[0].value == self.target_color)

    def _finishing_move(self, carrying) -> Optional[Action]:
        front = self._front_entity
        front_cell = self._rel_cell(0, 1)
        if self.goal_verb == "unlock":
            if front is not None and front[1] == "key" and front[0] == self.target_color \
                    and carrying is None:
                return Action.PICK_UP
            if front is not None and front[1] == "door" and front[2] == "locked" \
                    and front[0] == self.target_color and self._carrying_target_key(carrying):
                return Action.TOGGLE
        if self.goal_verb == "pick up" and carrying is None and front is not None \
                and front[1] == self.target_kind and front[0] == self.target_color:
            return Action.PICK_UP
        door = self._doors.get(front_cell)
        if door is not None and door[0] == "closed":
            return Action.TOGGLE
        return None

    def _nav_target(self, carrying) -> Optional[tuple[int, int]]:
        if self.goal_verb == "unlock":
            if self._carrying_target_key(carrying):
                for cell, (state, color) in sorted(self._doors.items()):
                    if state == "locked" and color == self.target_color:
                        return cell
            elif carrying is None:
                for cell, (color, kind) in sorted(self._objects.items()):
                    if kind == "key" and color == self.target_color:
                        return cell
        elif self.goal_verb == "pick up" and carrying is None:
            for cell, (color, kind) in sorted(self._objects.items()):
                if kind == self.target_kind and color == self.target_color:
                    return cell
        return None

    def _passable(self, cell: tuple[int, int], carrying) -> bool:
        if cell in self._blocked:
            return False
        door = self._doors.get(cell)
        if door is not None and door[0] == "locked":
            return self.goal_verb == "unlock" and self._carrying_target_key(carrying)
        return True

    def _navigate(self, carrying) -> Action:
        if self._replan or not self._plan or not self._plan_step_valid(self._plan[0]):
            self._plan = self._make_plan(carrying)
            self._replan = False
        if self._plan:
            return self._plan.pop(0)
        return self._patrol()

    def _plan_step_valid(self, action: Action) -> bool:
        if action is not Action.GO_FORWARD:
            return True
        front = self._rel_cell(0, 1)
        door = self._doors.get(front)
        if door is not None:
            return door[0] == "open"
        return front not in self._blocked

    def _make_plan(self, carrying) -> list[Action]:
        target = self._nav_target(carrying)
        if target is not None:
            if self._adjacent(target):
                return [self._rotate_toward(target)]
            plan = self._bfs_plan(goal_cells={target}, stop_adjacent=True,
                                  carrying=carrying)
            if plan:
                return plan
        plan = self._bfs_plan(goal_cells=None, stop_adjacent=False, carrying=carrying)
        if plan:
            return plan
        # Everything reachable is visited. Doors glimpsed diagonally have an
        # ambiguous cell; walking toward the candidate zone puts them on a
        # straight ray and pins them down, which may open new frontier.
        hints = {cell for cell in self._door_hints
                 if cell not in self._free and cell not in self._blocked
                 and cell not in self._doors}
        self._door_hints = hints
        if hints:
            plan = self._bfs_plan(goal_cells=hints, stop_adjacent=True,
                                  carrying=carrying)
            if plan:
                return plan
        return []

    def _adjacent(self, cell: tuple[int, int]) -> bool:
        return abs(cell[0] - self._pos[0]) + abs(cell[1] - self._pos[1]) == 1

    def _rotate_toward(self, cell: tuple[int, int]) -> Action:
        delta = (cell[0] - self._pos[0], cell[1] - self._pos[1])
        wanted = _H_VEC.index(delta)
        return self._turn_to(wanted)

    def _turn_to(self, wanted: int) -> Action:
        if wanted == self._heading:
            return Action.GO_FORWARD
        if (self._heading + 1) % 4 == wanted:
            return Action.TURN_RIGHT
        if (self._heading - 1) % 4 == wanted:
            return Action.TURN_LEFT
        # Directly behind: rotate through the side faced least recently.
        left = (self._heading - 1) % 4
        right = (self._heading + 1) % 4
        if self._heading_seen[left] == self._heading_seen[right] and self._last_turn is not None:
            return self._last_turn
        return Action.TURN_LEFT if self._heading_seen[left] <= self._heading_seen[right] \
            else Action.TURN_RIGHT

    def _is_frontier(self, cell: tuple[int, int]) -> bool:
        if cell in self._blocked:
            return False
        unknown = cell not in self._free and cell not in self._doors
        return unknown or cell not in self._visited

    def _bfs_plan(self, goal_cells: Optional[set[tuple[int, int]]],
                  stop_adjacent: bool, carrying) -> list[Action]:
        """Cheapest action plan (turns cost a step too) to a goal cell, an
        adjacency of one, or the nearest frontier. Empty when unreachable."""
        start = (self._pos, self._heading)
        queue = deque([start])
        parents: dict[tuple[tuple[int, int], int],
                      tuple[tuple[tuple[int, int], int], Action]] = {}
        seen = {start}
        expanded = 0

        def is_goal(cell: tuple[int, int]) -> bool:
            if cell == self._pos:
                return False
            if goal_cells is not None:
                if stop_adjacent:
                    return any((cell[0] + dx, cell[1] + dy) in goal_cells
                               for dx, dy in _H_VEC)
                return cell in goal_cells
            return self._is_frontier(cell)

        goal_state = None
        while queue and expanded < _BFS_LIMIT:
            state = queue.popleft()
            pos, heading = state
            expanded += 1
            if is_goal(pos):
                goal_state = state
                break
            fx, fy = _H_VEC[heading]
            ahead = (pos[0] + fx, pos[1] + fy)
            if abs(ahead[0]) <= _MAP_RADIUS and abs(ahead[1]) <= _MAP_RADIUS and \
                    self._passable(ahead, carrying):
                nxt = (ahead, heading)
                if nxt not in seen:
                    seen.add(nxt)
                    parents[nxt] = (state, Action.GO_FORWARD)
                    queue.append(nxt)
            for turn, action in (((heading - 1) % 4, Action.TURN_LEFT),
                                 ((heading + 1) % 4, Action.TURN_RIGHT)):
                nxt = (pos, turn)
                if nxt not in seen:
                    seen.add(nxt)
                    parents[nxt] = (state, action)
                    queue.append(nxt)
        if goal_state is None:
            return []
        plan: list[Action] = []
        state = goal_state
        while state != start:
            state, action = parents[state]
            plan.append(action)
        plan.reverse()
        return plan

    def _patrol(self) -> Action:
        # Fully mapped and visited: keep moving, rotating one way when
        # blocked so turns never oscillate.
        front = self._rel_cell(0, 1)
        door = self._doors.get(front)
        front_open = front not in self._blocked and (door is None or door[0] == "open")
        if front_open:
            return Action.GO_FORWARD
        if self._last_turn is not None:
            return self._last_turn
        left = (self._heading - 1) % 4
        right = (self._heading + 1) % 4
        return Action.TURN_LEFT if self._heading_seen[left] <= self._heading_seen[right] \
            else Action.TURN_RIGHT

    # -- bookkeeping ----------------------------------------------------------

    def _apply(self, action: Action, key: StateKey) -> None:
        front = self._rel_cell(0, 1)
        if action is Action.TURN_LEFT:
            self._heading = (self._heading - 1) % 4
            self._last_turn = Action.TURN_LEFT
            return
        if action is Action.TURN_RIGHT:
            self._heading = (self._heading + 1) % 4
            self._last_turn = Action.TURN_RIGHT
            return
        self._last_turn = None
        if action is Action.GO_FORWARD:
            door = self._doors.get(front)
            walkable = key.obstacle_map()["forward-1"] == NO_OBSTACLE or \
                (door is not None and door[0] == "open")
            if walkable:
                self._pos = front
                self._visited.add(front)
                if door is not None:
                    self._traversed_doors.add(front)
        elif action is Action.TOGGLE:
            door = self._doors.get(front)
            if door is not None:
                if door[0] == "closed":
                    self._doors[front] = ("open", door[1])
                elif door[0] == "locked":
                    self._doors[front] = ("open", door[1])
        elif action is Action.PICK_UP:
            if front in self._objects or front in self._blocked:
                self._mark_free(front)


class LLMExplorer:
    """Decision model over the serialized world graph; None on bad replies."""

    def __init__(self, client, game_description: str, mission: str,
                 history_window: int = 8, max_retries: int = 2):
        self._client = client
        self._game_description = game_description
        self._mission = mission
        self._max_retries = max_retries
        self.history: deque[tuple[str, str]] = deque(maxlen=history_window)
        self.parse_failures = 0

    def _history_text(self) -> str:
        if not self.history:
            return "(no history yet)"
        blocks = [f"Observation: {obs}\nAction: {action}" for obs, action in self.history]
        return "\n\n".join(blocks)

    def build_prompt(self, observation: Observation, graph: WorldGraph) -> str:
        return prompts.load_template("explore").format(
            game_description=self._game_description,
            mission=self._mission,
            action_space=", ".join(a.value for a in ACTION_ORDER),
            world_model=serialize(graph),
            history=self._history_text(),
            observation=observation.body_text(),
            format_requirements=EXPLORE_FORMAT_REQUIREMENTS,
        )

    def choose(self, observation: Observation, key: StateKey,
               graph: WorldGraph) -> Optional[Action]:
        from .llm_client import ChatRequest

        prompt = self.build_prompt(observation, graph)
        messages = [("user", prompt)]
        for attempt in range(self._max_retries + 1):
            reply = self._client.complete(
                ChatRequest(model=self._client.model, messages=tuple(messages))
            )
            action = parse_action_reply(reply)
            if action is not None:
                return action
            messages = messages + [
                ("assistant", reply),
                ("user", _RETRY_NOTE.format(hint="Reply with one action name only.",
                                            attempt=attempt + 1)),
            ]
        self.parse_failures += 1
        return None

    def record(self, observation_text: str, action: Action) -> None:
        self.history.append((observation_text, action.value))


class Controller:
    """Per-episode decision loop: exploit at critical states, else explore.

    A nonzero epsilon makes some critical states defer to the explorer
    instead of querying memory (training-time exploration). Episodic
    decisions still only ever happen at critical states, and non-critical
    states never touch the memory.
    """

    LOOP_GUARD = 3

    def __init__(self, memory: EpisodicMemory, criticality: CriticalityBackend,
                 explorer, scripted_fallback: Optional[ScriptedExplorer] = None,
                 epsilon: float = 0.0, rng: Optional[random.Random] = None):
        self.memory = memory
        self.criticality = criticality
        self.explorer = explorer
        self.scripted_fallback = scripted_fallback
        self.epsilon = epsilon
        self.rng = rng
        self.exploration_fallbacks = 0
        self._step = 0
        self._replayed: dict[tuple[str, str], int] = {}

    def decide(self, observation: Observation, key: StateKey,
               graph: WorldGraph) -> tuple[Action, DecisionTrace]:
        started = time.perf_counter()
        canonical = canonicalize(key)
        note = None
        critical = self.criticality.is_critical(key, observation)

        action: Optional[Action] = None
        source = SOURCE_SCRIPTED
        mode = Mode.EXPLORE
        if critical:
            if self.epsilon > 0.0 and self.rng is not None \
                    and self.rng.random() < self.epsilon:
                note = "epsilon_defer"
            else:
                action = exploit(self.memory, canonical)
                if action is not None:
                    # Deterministic replay of one remembered action can trap
                    # the agent in a cycle; after a few repeats of the same
                    # (key, action) pair this episode, treat it as a miss.
                    seen = self._replayed.get((canonical, action.value), 0)
                    if seen >= self.LOOP_GUARD:
                        note = "loop_guard"
                        action = None
                    else:
                        self._replayed[(canonical, action.value)] = seen + 1
                        source = SOURCE_EPISODIC
                        mode = Mode.EXPLOIT

        scripted = self.explorer if isinstance(self.explorer, ScriptedExplorer) \
            else self.scripted_fallback
        if action is None:
            if isinstance(self.explorer, LLMExplorer):
                action = self.explorer.choose(observation, key, graph)
                if action is not None:
                    source = SOURCE_LLM
                else:
                    self.exploration_fallbacks += 1
                    note = "llm_explorer_fallback"
                    if scripted is None:
                        scripted = ScriptedExplorer(observation.mission)
                        self.scripted_fallback = scripted
                    action = scripted.choose(observation, key, graph)
                    source = SOURCE_SCRIPTED
            else:
                action = self.explorer.choose(observation, key, graph)
                source = SOURCE_SCRIPTED
        if source != SOURCE_SCRIPTED and scripted is not None:
            # The fallback policy dead-reckons its position; it has to see
            # the steps other policies take or its map drifts.
            scripted.observe_external(observation, key, action)

        if isinstance(self.explorer, LLMExplorer):
            self.explorer.record(observation.body_text(), action)

        trace = DecisionTrace(
            step=self._step,
            mode=mode.value,
            critical=critical,
            key=canonical,
            action=action.value,
            source=source,
            latency=time.perf_counter() - started,
            note=note,
        )
        self._step += 1
        return action, trace


def explore(observation: Observation, graph: WorldGraph, backend,
            key: Optional[StateKey] = None) -> Action:
    """Exploration step through the given backend (scripted or LLM)."""
    action = backend.choose(observation, key, graph)
    if action is None:
        raise RuntimeError("exploration backend failed to produce an action")
    return action
