"""Per-(key, action) historical-max return store.

Episodes are recorded into a buffer, sealed, turned into discounted returns,
and committed: new pairs are inserted, existing pairs keep the maximum of
stored value and fresh return. Lookups are exact string matches on the
canonical key. Files are line-delimited JSON with a metadata header so
memories survive runs and transfer across tasks.
"""

from __future__ import annotations

import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .encoder import CANONICAL_VERSION, CanonicalKey
from .gridworld import ACTION_ORDER, Action

MEMORY_FORMAT = "epigrid-memory/1"


class MemoryLoadError(ValueError):
    """Memory file is unreadable, corrupt, or from an incompatible version."""


class ConfigMismatchError(ValueError):
    """Operation parameters disagree with the memory's metadata."""


@dataclass(frozen=True)
class TransitionRecord:
    t: int
    key: CanonicalKey
    action: Action
    reward: float


class EpisodeBuffer:
    """Append-only per-episode transition log; commit requires sealing."""

    def __init__(self) -> None:
        self._records: list[TransitionRecord] = []
        self._sealed = False

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[TransitionRecord]:
        return iter(self._records)

    @property
    def sealed(self) -> bool:
        return self._sealed

    def record(self, key: CanonicalKey, action: Action, reward: float) -> None:
        if self._sealed:
            raise RuntimeError("cannot record into a sealed episode buffer")
        self._records.append(TransitionRecord(len(self._records), key, action, float(reward)))

    def seal(self) -> None:
        self._sealed = True


def record(buffer: EpisodeBuffer, key: CanonicalKey, action: Action, reward: float) -> None:
    buffer.record(key, action, reward)


def compute_returns(buffer: EpisodeBuffer, gamma: float) -> list[tuple[CanonicalKey, Action, float]]:
    """Discounted tail returns, one per record, order preserved."""
    if not buffer.sealed:
        raise RuntimeError("seal the buffer before computing returns")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    out: list[tuple[CanonicalKey, Action, float]] = []
    tail = 0.0
    for rec in reversed(list(buffer)):
        tail = rec.reward + gamma * tail
        out.append((rec.key, rec.action, tail))
    out.reverse()
    return out


@dataclass
class EpisodicEntry:
    key: CanonicalKey
    values: dict[Action, float] = field(default_factory=dict)
    visits: dict[Action, int] = field(default_factory=dict)

    def copy(self) -> "EpisodicEntry":
        return EpisodicEntry(self.key, dict(self.values), dict(self.visits))


@dataclass
class CommitStats:
    inserted: int = 0
    raised: int = 0
    unchanged: int = 0


@dataclass
class MergeStats:
    added_keys: int = 0
    added_pairs: int = 0
    raised_pairs: int = 0
    unchanged_pairs: int = 0


class EpisodicMemory:
    """Exact-match key/action value table with monotone max updates.

    Commits swap in a fresh entries dict, so concurrent readers observe
    either the pre- or post-commit table, never a partial one.
    """

    def __init__(self, task: str, gamma: float = 0.99,
                 created_at: Optional[float] = None,
                 max_entries: Optional[int] = None,
                 canonical_version: str = CANONICAL_VERSION,
                 sources: Optional[list[str]] = None):
        if not 0.0 <= gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.task = task
        self.gamma = gamma
        # Callers wanting byte-reproducible files pass a fixed timestamp.
        self.created_at = time.time() if created_at is None else created_at
        self.canonical_version = canonical_version
        self.sources = list(sources) if sources else [task]
        self.max_entries = max_entries
        self._entries: dict[CanonicalKey, EpisodicEntry] = {}
        self._commit_seq: dict[CanonicalKey, int] = {}
        self._seq = 0
        self.lookup_count = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> dict[CanonicalKey, EpisodicEntry]:
        return self._entries

    def lookup(self, key: CanonicalKey) -> Optional[EpisodicEntry]:
        self.lookup_count += 1
        return self._entries.get(key)

    def best_action(self, key: CanonicalKey) -> Optional[tuple[Action, float]]:
        entry = self.lookup(key)
        if entry is None or not entry.values:
            return None
        best = max(
            entry.values.items(),
            key=lambda kv: (kv[1], -ACTION_ORDER.index(kv[0])),
        )
        return best

    def commit(self, buffer: EpisodeBuffer, gamma: float) -> CommitStats:
        if gamma != self.gamma:
            raise ConfigMismatchError(
                f"commit gamma {gamma} does not match memory gamma {self.gamma}"
            )
        stats = CommitStats()
        updates = compute_returns(buffer, gamma)
        if not updates:
            return stats
        new_entries = dict(self._entries)
        touched: dict[CanonicalKey, EpisodicEntry] = {}
        for key, action, ret in updates:
            entry = touched.get(key)
            if entry is None:
                existing = new_entries.get(key)
                entry = existing.copy() if existing is not None else EpisodicEntry(key)
                touched[key] = entry
                new_entries[key] = entry
            if action not in entry.values:
                entry.values[action] = ret
                entry.visits[action] = 1
                stats.inserted += 1
            elif ret > entry.values[action]:
                entry.values[action] = ret
                entry.visits[action] = entry.visits.get(action, 0) + 1
                stats.raised += 1
            else:
                stats.unchanged += 1
        if stats.inserted or stats.raised:
            for key in touched:
                self._seq += 1
                self._commit_seq[key] = self._seq
            self._evict_over_capacity(new_entries)
            self._entries = new_entries
        return stats

    def _evict_over_capacity(self, entries: dict[CanonicalKey, EpisodicEntry]) -> None:
        if self.max_entries is None:
            return
        while len(entries) > self.max_entries:
            victim = min(entries, key=lambda k: self._commit_seq.get(k, 0))
            del entries[victim]
            self._commit_seq.pop(victim, None)

    # -- persistence --------------------------------------------------------

    def _header(self) -> dict:
        return {
            "format": MEMORY_FORMAT,
            "canonical_version": self.canonical_version,
            "task": self.task,
            "gamma": self.gamma,
            "created_at": self.created_at,
            "sources": self.sources,
        }

    def dumps(self) -> str:
        lines = [json.dumps(self._header(), sort_keys=True)]
        for key in sorted(self._entries):
            entry = self._entries[key]
            lines.append(json.dumps({
                "key": key,
                "values": {a.value: entry.values[a]
                           for a in ACTION_ORDER if a in entry.values},
                "visits": {a.value: entry.visits[a]
                           for a in ACTION_ORDER if a in entry.visits},
            }, sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".memory-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(self.dumps())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def loads(cls, text: str, max_entries: Optional[int] = None) -> "EpisodicMemory":
        lines = text.splitlines()
        if not lines:
            raise MemoryLoadError("empty memory file (no header line)")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise MemoryLoadError(f"corrupt header line 1: {exc}") from exc
        if header.get("format") != MEMORY_FORMAT:
            raise MemoryLoadError(
                f"unsupported memory format {header.get('format')!r}, expected {MEMORY_FORMAT!r}"
            )
        memory = cls(
            task=header["task"],
            gamma=header["gamma"],
            created_at=header["created_at"],
            max_entries=max_entries,
            canonical_version=header["canonical_version"],
            sources=header.get("sources") or [header["task"]],
        )
        for number, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                entry = EpisodicEntry(
                    key=payload["key"],
                    values={Action(a): float(v) for a, v in payload["values"].items()},
                    visits={Action(a): int(v) for a, v in payload["visits"].items()},
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MemoryLoadError(
                    f"corrupt entry at line {number} (last valid line {number - 1}): {exc}"
                ) from exc
            memory._seq += 1
            memory._entries[entry.key] = entry
            memory._commit_seq[entry.key] = memory._seq
        return memory

    @classmethod
    def load(cls, path: str, max_entries: Optional[int] = None) -> "EpisodicMemory":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise MemoryLoadError(f"cannot read memory file {path}: {exc}") from exc
        return cls.loads(text, max_entries=max_entries)

    # -- transfer -----------------------------------------------------------

    def import_foreign(self, other: "EpisodicMemory") -> MergeStats:
        if other.canonical_version != self.canonical_version:
            raise MemoryLoadError(
                "canonical-form version mismatch: "
                f"{other.canonical_version!r} vs {self.canonical_version!r}"
            )
        if other.gamma != self.gamma:
            raise ConfigMismatchError(
                f"cannot merge returns discounted at {other.gamma} into memory at {self.gamma}"
            )
        stats = MergeStats()
        new_entries = dict(self._entries)
        for key, foreign in other._entries.items():
            local = new_entries.get(key)
            if local is None:
                new_entries[key] = foreign.copy()
                stats.added_keys += 1
                stats.added_pairs += len(foreign.values)
                self._seq += 1
                self._commit_seq[key] = self._seq
                continue
            merged = local.copy()
            for action, value in foreign.values.items():
                if action not in merged.values:
                    merged.values[action] = value
                    merged.visits[action] = foreign.visits.get(action, 1)
                    stats.added_pairs += 1
                elif value > merged.values[action]:
                    merged.values[action] = value
                    merged.visits[action] = max(
                        merged.visits.get(action, 1), foreign.visits.get(action, 1)
                    )
                    stats.raised_pairs += 1
                else:
                    merged.visits[action] = max(
                        merged.visits.get(action, 1), foreign.visits.get(action, 1)
                    )
                    stats.unchanged_pairs += 1
            new_entries[key] = merged
            self._seq += 1
            self._commit_seq[key] = self._seq
        self._evict_over_capacity(new_entries)
        self._entries = new_entries
        for source in other.sources:
            if source not in self.sources:
                self.sources.append(source)
        return stats
