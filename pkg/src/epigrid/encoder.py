"""Semantic state keys for episodic retrieval.

An observation is reduced to a small structured record: where the current
target is (pure direction phrases, distances stripped), whether the agent
carries anything, what blocks the three adjacent cells, and whether the
target sits exactly one step ahead. Equal records serialize to equal
canonical strings, which is what memory lookups match on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Protocol

from . import prompts
from .gridworld import (
    Color,
    DoorState,
    Entity,
    EntityKind,
    FullState,
    Task,
    TaskSpec,
    direction_phrase,
    rel_to_abs,
    visible_rel_cells,
)

CANONICAL_VERSION = "1"

DIRECTION_PHRASES = (
    "forward",
    "left",
    "right",
    "left and forward",
    "right and forward",
)

OBSTACLE_PROBES = ("forward-1", "left-1", "right-1")
NO_OBSTACLE = "no"

_COLOR_WORDS = tuple(c.value for c in Color)

ENCODER_FORMAT_REQUIREMENTS = """Respond with exactly four lines and nothing else:
TARGETS: target <direction phrase>; target <direction phrase>; ... (write "none" when the target is not in view)
CARRYING: yes or no
OBSTACLES: forward-1: <entity or no>; left-1: <entity or no>; right-1: <entity or no>
TARGET 1 STEP FORWARD: yes or no"""


class ParseError(ValueError):
    """Encoder output did not follow the required format."""

    def __init__(self, message: str, line: Optional[str] = None):
        super().__init__(message if line is None else f"{message}: {line!r}")
        self.line = line


class EncodeError(RuntimeError):
    """Backend failed to produce a parseable state key."""


@dataclass(frozen=True)
class EncoderInput:
    env_description: str
    raw_state: str
    task_instruction: str

    def __post_init__(self) -> None:
        for name in ("env_description", "raw_state", "task_instruction"):
            if not getattr(self, name).strip():
                raise ValueError(f"encoder input is missing its {name}")


@dataclass(frozen=True)
class StateKey:
    target_directions: tuple[str, ...]
    carrying: bool
    obstacles: tuple[str, str, str]  # forward-1, left-1, right-1
    target_one_step_forward: bool

    def __post_init__(self) -> None:
        for phrase in self.target_directions:
            if phrase not in DIRECTION_PHRASES:
                raise ValueError(f"unknown direction phrase {phrase!r}")
        if len(self.obstacles) != len(OBSTACLE_PROBES):
            raise ValueError("obstacles must cover exactly the three probe directions")
        for token in self.obstacles:
            if any(ch.isdigit() for ch in token):
                raise ValueError(f"obstacle token contains a digit: {token!r}")

    def obstacle_map(self) -> dict[str, str]:
        return dict(zip(OBSTACLE_PROBES, self.obstacles))


CanonicalKey = str


def canonicalize(key: StateKey) -> CanonicalKey:
    """Deterministic, injective serialization; memory equality target."""
    targets = ",".join(key.target_directions) if key.target_directions else "none"
    obstacles = ",".join(
        f"{probe}:{token}" for probe, token in zip(OBSTACLE_PROBES, key.obstacles)
    )
    return (
        f"targets={targets};"
        f"carrying={'yes' if key.carrying else 'no'};"
        f"obstacles={obstacles};"
        f"target1fwd={'yes' if key.target_one_step_forward else 'no'}"
    ).lower()


def build_encoder_prompt(encoder_input: EncoderInput) -> str:
    return prompts.load_template("encoder").format(
        env_description=encoder_input.env_description,
        mission=encoder_input.task_instruction,
        observation=encoder_input.raw_state,
        format_requirements=ENCODER_FORMAT_REQUIREMENTS,
    )


def render_encoder_output(key: StateKey) -> str:
    """The reply block a well-behaved model would produce for this key."""
    if key.target_directions:
        targets = "; ".join(f"target {p}" for p in key.target_directions)
    else:
        targets = "none"
    obstacles = "; ".join(
        f"{probe}: {token}" for probe, token in zip(OBSTACLE_PROBES, key.obstacles)
    )
    return (
        f"TARGETS: {targets}\n"
        f"CARRYING: {'yes' if key.carrying else 'no'}\n"
        f"OBSTACLES: {obstacles}\n"
        f"TARGET 1 STEP FORWARD: {'yes' if key.target_one_step_forward else 'no'}"
    )


def _strip_colors(token: str) -> str:
    words = [w for w in token.split() if w not in _COLOR_WORDS]
    return " ".join(words)


def _parse_labeled_lines(text: str) -> dict[str, str]:
    labels = {
        "targets": None,
        "carrying": None,
        "obstacles": None,
        "target 1 step forward": None,
    }
    for raw in text.splitlines():
        line = raw.strip()
        if not line or ":" not in line:
            continue
        label, _, value = line.partition(":")
        label = label.strip().lower()
        if label in labels and labels[label] is None:
            labels[label] = value.strip()
    return labels


def parse_encoder_output(text: str) -> StateKey:
    """Strict extraction of the four fields; anything off-format raises."""
    fields = _parse_labeled_lines(text)
    for label, value in fields.items():
        if value is None:
            raise ParseError(f"missing {label.upper()} line", text.strip().splitlines()[-1] if text.strip() else "")

    targets: list[str] = []
    raw_targets = fields["targets"].strip().lower()
    if raw_targets not in ("none", ""):
        for entry in raw_targets.split(";"):
            entry = entry.strip()
            if not entry:
                continue
            if any(ch.isdigit() for ch in entry):
                raise ParseError("direction phrases must not contain numbers", entry)
            phrase = entry[len("target "):].strip() if entry.startswith("target ") else entry
            if phrase not in DIRECTION_PHRASES:
                raise ParseError("unknown direction phrase", entry)
            targets.append(phrase)

    carrying_raw = fields["carrying"].strip().lower()
    if carrying_raw not in ("yes", "no"):
        raise ParseError("CARRYING must be yes or no", fields["carrying"])

    probe_values = {}
    for part in fields["obstacles"].split(";"):
        part = part.strip().lower()
        if not part:
            continue
        probe, sep, token = part.partition(":")
        probe = probe.strip()
        if not sep or probe not in OBSTACLE_PROBES:
            raise ParseError("obstacle probe must be one of forward-1/left-1/right-1", part)
        token = _strip_colors(token.strip())
        if not token:
            token = NO_OBSTACLE
        if token in ("none", "nothing", "clear", "empty"):
            token = NO_OBSTACLE
        if any(ch.isdigit() for ch in token):
            raise ParseError("obstacle token must not contain numbers", part)
        probe_values[probe] = token
    if set(probe_values) != set(OBSTACLE_PROBES):
        raise ParseError("obstacles must cover exactly the three probe directions",
                         fields["obstacles"])

    t1f_raw = fields["target 1 step forward"].strip().lower()
    if t1f_raw not in ("yes", "no"):
        raise ParseError("TARGET 1 STEP FORWARD must be yes or no",
                         fields["target 1 step forward"])

    return StateKey(
        target_directions=tuple(targets),
        carrying=carrying_raw == "yes",
        obstacles=tuple(probe_values[p] for p in OBSTACLE_PROBES),
        target_one_step_forward=t1f_raw == "yes",
    )


# ---------------------------------------------------------------------------
# Ground-truth oracle
# ---------------------------------------------------------------------------

def resolve_current_target(state: FullState, spec: TaskSpec) -> tuple[Color, EntityKind]:
    """The object the agent should be after right now.

    Unlocking has a prerequisite: until the matching key is in hand, the key
    is the current target, not the door.
    """
    if spec.task is Task.UNLOCK_LOCAL:
        color = spec.target[0]
        if state.carrying == (color, EntityKind.KEY):
            return (color, EntityKind.DOOR)
        return (color, EntityKind.KEY)
    return spec.target


def _matches_target(entity: Entity, target: tuple[Color, EntityKind]) -> bool:
    color, kind = target
    if entity.kind is not kind:
        return False
    return entity.color == color


def _obstacle_token(entity: Optional[Entity]) -> str:
    if entity is None:
        return NO_OBSTACLE
    if entity.kind is EntityKind.WALL:
        return "wall"
    if entity.kind is EntityKind.DOOR:
        if entity.state is DoorState.OPEN:
            return NO_OBSTACLE  # walkable, hence not blocking
        return f"{entity.state.value} door"
    return entity.kind.value


def oracle_encode(state: FullState, spec: TaskSpec) -> StateKey:
    """Reference implementation of the encoding procedure over ground truth."""
    target = resolve_current_target(state, spec)
    directions: list[str] = []
    one_step_forward = False
    for lat, fwd in visible_rel_cells(state.cells, state.agent_pos, state.agent_dir):
        entity = state.cells.get(rel_to_abs(state.agent_pos, state.agent_dir, lat, fwd))
        if entity is None or entity.kind is EntityKind.WALL:
            continue
        if _matches_target(entity, target):
            directions.append(direction_phrase(lat, fwd))
            if (lat, fwd) == (0, 1):
                one_step_forward = True
    probes = []
    for lat, fwd in ((0, 1), (-1, 0), (1, 0)):
        entity = state.cells.get(rel_to_abs(state.agent_pos, state.agent_dir, lat, fwd))
        probes.append(_obstacle_token(entity))
    return StateKey(
        target_directions=tuple(directions),
        carrying=state.carrying is not None,
        obstacles=tuple(probes),
        target_one_step_forward=one_step_forward,
    )


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class EncoderBackend(Protocol):
    def encode_state(self, encoder_input: EncoderInput) -> StateKey: ...


def encode(encoder_input: EncoderInput, backend: EncoderBackend) -> StateKey:
    return backend.encode_state(encoder_input)


class OracleEncoderBackend:
    """Computes the key straight from the simulator's ground truth."""

    def __init__(self, env, spec: Optional[TaskSpec] = None):
        self._env = env
        self._spec = spec or env.spec

    def encode_state(self, encoder_input: EncoderInput) -> StateKey:
        return oracle_encode(self._env.ground_truth(), self._spec)


_RETRY_NOTE = (
    "Your previous reply did not follow the OUTPUT FORMAT. "
    "Reply again with exactly the four required lines. (attempt {attempt})"
)


class LLMEncoderBackend:
    """Prompts a chat model and parses its reply into a state key.

    Malformed replies get up to two corrective re-prompts before the step is
    given up with an EncodeError. Every attempt can be appended to a JSONL
    transcript for audit.
    """

    def __init__(self, client, max_retries: int = 2,
                 transcript_path: Optional[str] = None):
        self._client = client
        self._max_retries = max_retries
        self._transcript_path = transcript_path
        self.parse_failures = 0

    def _log(self, prompt: str, reply: Optional[str], key: Optional[StateKey], error: Optional[str]) -> None:
        if self._transcript_path is None:
            return
        record = {
            "prompt": prompt,
            "reply": reply,
            "parsed": canonicalize(key) if key is not None else None,
            "error": error,
        }
        with open(self._transcript_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def encode_state(self, encoder_input: EncoderInput) -> StateKey:
        from .llm_client import ChatRequest  # local import avoids a cycle at module load

        prompt = build_encoder_prompt(encoder_input)
        messages = [("user", prompt)]
        last_error: Optional[Exception] = None
        for attempt in range(self._max_retries + 1):
            request = ChatRequest(model=self._client.model, messages=tuple(messages))
            reply = self._client.complete(request)
            try:
                key = parse_encoder_output(reply)
            except ParseError as exc:
                self.parse_failures += 1
                last_error = exc
                self._log(prompt, reply, None, str(exc))
                messages = messages + [
                    ("assistant", reply),
                    ("user", _RETRY_NOTE.format(attempt=attempt + 1)),
                ]
                continue
            self._log(prompt, reply, key, None)
            return key
        raise EncodeError(f"no parseable state key after {self._max_retries + 1} attempts: {last_error}")
