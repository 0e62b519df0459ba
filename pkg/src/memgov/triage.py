"""Streaming shallow filter in front of the buffer.

Nothing in this module can reach the wiki: :class:`BufferLane` exposes only
blob writes, buffer appends and the recent-buffer window.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Iterable

from .content import canonicalize, content_hash, parse_claims
from .events import EventLog, task_scope
from .model import (
    BufferEntry,
    BufferState,
    EdgeKind,
    OriginChannel,
    TransitionRecord,
)
from .store import Store

STRUCTURAL_REASONS = frozenset({"duplicate", "empty-claims", "zero-strength", "oversize"})

_task_ids = itertools.count(1)


@dataclass(frozen=True)
class TriageConfig:
    size_cap: int = 1 << 20
    dedup_cycles: int = 2
    default_priority: float = 0.5


@dataclass(frozen=True)
class Accepted:
    entry: BufferEntry


@dataclass(frozen=True)
class Rejected:
    reason: str
    id: str | None = None


class BufferLane:
    """The only store surface TRIAGE gets: blobs, buffer appends, recent ids."""

    def __init__(self, store: Store) -> None:
        self._store = store

    def put_blob(self, content: bytes) -> str:
        return self._store.put_blob(content)

    def append(self, entry: BufferEntry, transitions: Iterable[TransitionRecord] = ()) -> bool:
        return self._store.append_buffer(entry, transitions)

    def seen(self, ident: str) -> bool:
        return self._store.known_buffer_id(ident)

    def recent_ids(self, cycle: int, window: int) -> frozenset[str]:
        lo = cycle - window
        return frozenset(e.id for _, e in self._store._buffer_log if e.ingested_cycle >= lo)


def triage(raw: bytes | str, channel: OriginChannel | str, lane: BufferLane, *, tick: int,
           cycle: int = 0, events: EventLog | None = None, config: TriageConfig = TriageConfig(),
           hints: Iterable[tuple[str, str]] = (), priority: float | None = None,
           locator: str = "", safety_flag: bool = False, task: str | None = None) -> Accepted | Rejected:
    """Accept ``raw`` into the buffer as a pending entry, or reject it structurally.

    Raises MalformedContent when the bytes are not valid claim JSONL.
    """
    channel = OriginChannel(channel)
    task = task or f"ingest-{next(_task_ids)}"
    with task_scope(task):
        if events is not None:
            events.emit("ingest-start", channel=channel.value)
        try:
            return _triage(raw, channel, lane, tick=tick, cycle=cycle, events=events,
                           config=config, hints=tuple(hints), priority=priority,
                           locator=locator, safety_flag=safety_flag)
        finally:
            if events is not None:
                events.emit("ingest-end")


def _triage(raw: bytes | str, channel: OriginChannel, lane: BufferLane, *, tick: int, cycle: int,
            events: EventLog | None, config: TriageConfig, hints: tuple[tuple[str, str], ...],
            priority: float | None, locator: str, safety_flag: bool) -> Accepted | Rejected:
    data = canonicalize(raw)
    ident = content_hash(data)
    if not data.strip():
        # nothing to store or identify; no buffer row
        return Rejected("empty-claims", ident)
    oversize = len(data) > config.size_cap
    claims = [] if oversize else parse_claims(data)

    if ident in lane.recent_ids(cycle, config.dedup_cycles) or lane.seen(ident):
        if events is not None:
            events.emit("triage-reject", id=ident, reason="duplicate")
        return Rejected("duplicate", ident)

    reason = None
    if oversize:
        reason = "oversize"
    elif not claims:
        reason = "empty-claims"
    elif all(c.strength == 0 for c in claims):
        reason = "zero-strength"

    for _target, kind in hints:
        EdgeKind(kind)  # structural check of the placeholder only
    blob = lane.put_blob(data)
    entry = BufferEntry(
        id=ident,
        ingested_at=tick,
        source_ptr=blob,
        origin_channel=channel,
        initial_priority=config.default_priority if priority is None else priority,
        claims=tuple(claims),
        candidate_edges=hints,
        ingested_cycle=cycle,
        origin_locator=locator,
        safety_flag=safety_flag,
    )
    transitions: list[TransitionRecord] = []
    if reason is not None:
        # garbage keeps a rejected row so its id stays resolvable
        entry = replace(entry, state=BufferState.REJECTED, reason=reason)
        transitions.append(TransitionRecord(tick, ident, "reject", "pending", "rejected"))
    if not lane.append(entry, transitions):
        if events is not None:
            events.emit("triage-reject", id=ident, reason="duplicate")
        return Rejected("duplicate", ident)
    if events is not None:
        events.emit("buffer-write", id=ident, state=entry.state.value, reason=reason,
                    source_ptr=blob)
    if reason is not None:
        return Rejected(reason, ident)
    return Accepted(entry)
