"""Entities, lifecycle state machines and system invariants.

Every lifecycle change goes through :func:`transition`, which returns a new
immutable record and appends one line to the shared transition log.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Protocol


class MemgovError(Exception):
    """Base class for engine errors."""


class MalformedContent(MemgovError):
    pass


class IllegalTransition(MemgovError):
    pass


class UnknownEvent(MemgovError):
    pass


class UnknownEntry(MemgovError):
    pass


class OriginChannel(str, enum.Enum):
    CONVERSATION = "conversation"
    DOCUMENT = "document"
    EXTERNAL = "external"


EXTERNAL_CHANNELS = frozenset({OriginChannel.DOCUMENT, OriginChannel.EXTERNAL})


class BufferState(str, enum.Enum):
    PENDING = "pending"
    CONSOLIDATED = "consolidated"
    REJECTED = "rejected"
    EXPIRED = "expired"


class WikiState(str, enum.Enum):
    ACTIVE = "active"
    DECAYING = "decaying"
    ARCHIVED = "archived"


LIVE_STATES = frozenset({WikiState.ACTIVE, WikiState.DECAYING})


class ColdState(str, enum.Enum):
    STORED = "stored"
    RECALLED = "recalled"
    RECOMPRESSED = "recompressed"


class BranchState(str, enum.Enum):
    OPEN = "open"
    PROMOTED = "promoted"
    CLOSED = "closed"


class EdgeKind(str, enum.Enum):
    DEPENDENCY = "dependency"
    SUPPORT = "support"
    CONTRADICTION = "contradiction"


class Bucket(str, enum.Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


class Verdict(str, enum.Enum):
    DEGRADED = "degraded"
    UNCHANGED = "unchanged"
    IMPROVED = "improved"


class Outcome(str, enum.Enum):
    RESTORED = "restored"
    GRAVITY_REDUCED = "gravity_reduced"
    ARCHIVED = "archived"


@dataclass(frozen=True)
class ClaimTuple:
    topic: str
    polarity: int
    strength: float
    text: str = ""

    def __post_init__(self) -> None:
        if not self.topic:
            raise ValueError("claim topic must be non-empty")
        if self.polarity not in (-1, 1):
            raise ValueError(f"polarity must be -1 or +1, got {self.polarity!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError(f"strength must lie in [0, 1], got {self.strength!r}")
        # claims are hashed constantly by the scorer caches
        object.__setattr__(self, "_hash", hash((self.topic, self.polarity, self.strength, self.text)))

    def __hash__(self) -> int:
        return self._hash


@dataclass(frozen=True)
class BufferEntry:
    id: str
    ingested_at: int
    source_ptr: str
    origin_channel: OriginChannel
    initial_priority: float
    claims: tuple[ClaimTuple, ...]
    candidate_edges: tuple[tuple[str, str], ...] = ()
    state: BufferState = BufferState.PENDING
    ingested_cycle: int = 0
    origin_locator: str = ""
    safety_flag: bool = False
    reason: str | None = None


@dataclass(frozen=True)
class WikiEntry:
    id: str
    commit_hash: str
    blob_hash: str
    claims: tuple[ClaimTuple, ...]
    created_at: int
    last_accessed: int
    access_count: int = 0
    utility_trace: tuple[tuple[int, float], ...] = ()
    vitality: float = 0.0
    gravity_base: float = 0.0
    gravity_eff: float = 0.0
    # AUDIT's reduction path multiplies the structural score by this factor.
    gravity_scale: float = 1.0
    quarantined: bool = False
    gravity_protected: bool = False
    flagged: bool = False
    summarization_distortion: float = 0.0
    cohesion_bucket: Bucket = Bucket.HIGH
    state: WikiState = WikiState.ACTIVE
    origin_channel: OriginChannel = OriginChannel.CONVERSATION
    source_ids: tuple[str, ...] = ()
    depth: int | None = None
    cold_id: str | None = None
    tombstone_cold_id: str | None = None
    negative_cycles: int = 0
    review_flagged: bool = False

    @property
    def live(self) -> bool:
        return self.state in LIVE_STATES

    @property
    def topics(self) -> frozenset[str]:
        return frozenset(c.topic for c in self.claims)


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    kind: EdgeKind
    weight: float
    # Retired edges stay in the index but leave the live graph.
    live: bool = True

    def __post_init__(self) -> None:
        if self.src == self.dst:
            raise ValueError("self-edges are not allowed")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"edge weight must lie in [0, 1], got {self.weight!r}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.src, self.dst, self.kind.value)


@dataclass(frozen=True)
class ColdObject:
    id: str
    blob_hash: str
    origin_locator: str
    linkout_valid: bool = True
    state: ColdState = ColdState.STORED
    generation: int = 0
    parent: str | None = None


@dataclass(frozen=True)
class AuditRecord:
    entry_id: str
    ts: int
    suspension_result: Verdict
    outcome: Outcome
    delta: float | None = None
    untested: bool = False
    source: str = "audit"
    note: str = ""
    chain: str = ""

    def body(self) -> dict[str, Any]:
        return {
            "entry": self.entry_id,
            "ts": self.ts,
            "result": self.suspension_result.value,
            "outcome": self.outcome.value,
            "delta": self.delta,
            "untested": self.untested,
            "source": self.source,
            "note": self.note,
        }


def chain_hash(prev: str, record: AuditRecord) -> str:
    payload = prev + json.dumps(record.body(), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MinorityBranch:
    branch_ref: str
    incumbent_id: str
    member_ids: frozenset[str]
    contradiction_edge_count: int = 0
    cycles_open: int = 0
    state: BranchState = BranchState.OPEN
    size_history: tuple[int, ...] = ()
    created_cycle: int = 0
    closure_reason: str | None = None

    def __post_init__(self) -> None:
        if self.state is BranchState.OPEN and not self.member_ids:
            raise ValueError("an open branch needs at least one member")


# (entity kind, from state, event) -> to state
TRANSITIONS: dict[tuple[str, str, str], str] = {
    ("buffer", "pending", "consolidate"): "consolidated",
    ("buffer", "pending", "reject"): "rejected",
    ("buffer", "pending", "expire"): "expired",
    ("wiki", "active", "decay"): "decaying",
    ("wiki", "active", "archive"): "archived",
    ("wiki", "decaying", "archive"): "archived",
    ("cold", "stored", "recall"): "recalled",
    ("cold", "stored", "recompress"): "recompressed",
    ("cold", "recalled", "recompress"): "recompressed",
    ("branch", "open", "promote"): "promoted",
    ("branch", "open", "close"): "closed",
}

EVENTS: dict[str, frozenset[str]] = {}
for (_kind, _src, _event) in TRANSITIONS:
    EVENTS.setdefault(_kind, frozenset())
    EVENTS[_kind] = EVENTS[_kind] | {_event}

STATE_ENUMS: dict[str, type[enum.Enum]] = {
    "buffer": BufferState,
    "wiki": WikiState,
    "cold": ColdState,
    "branch": BranchState,
}


def entity_kind(entity: Any) -> str:
    if isinstance(entity, BufferEntry):
        return "buffer"
    if isinstance(entity, WikiEntry):
        return "wiki"
    if isinstance(entity, ColdObject):
        return "cold"
    if isinstance(entity, MinorityBranch):
        return "branch"
    raise TypeError(f"{type(entity).__name__} has no lifecycle")


def entity_id(entity: Any) -> str:
    if isinstance(entity, MinorityBranch):
        return entity.branch_ref
    return entity.id


@dataclass(frozen=True)
class TransitionRecord:
    tick: int
    entity: str
    event: str
    from_state: str
    to_state: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "tick": self.tick,
                "entity": self.entity,
                "event": self.event,
                "from": self.from_state,
                "to": self.to_state,
            }
        )


@dataclass
class TransitionLog:
    """Flat append-only transition log shared by every entity."""

    records: list[TransitionRecord] = field(default_factory=list)

    def append(self, record: TransitionRecord) -> None:
        self.records.append(record)

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)


def next_state(kind: str, state: str, event: str) -> str:
    if event not in EVENTS.get(kind, ()):
        raise UnknownEvent(f"{event!r} is not an event of {kind} entities")
    try:
        return TRANSITIONS[(kind, state, event)]
    except KeyError:
        raise IllegalTransition(f"{kind} in state {state!r} cannot take {event!r}") from None


def transition(entity: Any, event: str, *, tick: int, log: TransitionLog | None = None,
               reason: str | None = None) -> Any:
    """Apply ``event`` to ``entity`` and return the new version.

    Flags and content are carried over untouched. Rejecting a buffer entry
    requires a content-grounds ``reason``.
    """
    kind = entity_kind(entity)
    current = entity.state.value
    target = next_state(kind, current, event)
    changes: dict[str, Any] = {"state": STATE_ENUMS[kind](target)}
    if kind == "buffer" and event == "reject":
        if not reason:
            raise IllegalTransition("rejection requires a content-grounds reason")
        changes["reason"] = reason
    if kind == "branch" and event == "close":
        changes["closure_reason"] = reason or "closed"
    updated = replace(entity, **changes)
    if log is not None:
        log.append(TransitionRecord(tick, entity_id(entity), event, current, target))
    return updated


@dataclass(frozen=True)
class Violation:
    invariant: str
    object_id: str
    detail: str = ""


class SystemView(Protocol):
    """What :func:`validate_state` needs to see of a whole-system snapshot."""

    entries: dict[str, WikiEntry]
    buffer: dict[str, BufferEntry]
    cold: dict[str, ColdObject]
    branches: dict[str, MinorityBranch]
    audit_log: tuple[AuditRecord, ...]

    def has_commit(self, commit_id: str) -> bool: ...

    def has_blob(self, blob_hash: str) -> bool: ...

    def read_blob(self, blob_hash: str) -> bytes: ...

    def issued_ids(self) -> Iterable[tuple[str, str]]: ...

    def branch_closures(self) -> dict[str, str]: ...


def validate_state(view: SystemView) -> list[Violation]:
    """Return every broken system invariant; an empty list means all hold."""
    from .content import content_hash

    violations: list[Violation] = []
    for entry in view.entries.values():
        if entry.state is WikiState.ARCHIVED:
            if entry.tombstone_cold_id is None or entry.tombstone_cold_id not in view.cold:
                violations.append(Violation("TombstoneWithoutColdCopy", entry.id))
            continue
        if not view.has_commit(entry.commit_hash) or not view.has_blob(entry.blob_hash):
            violations.append(Violation("BrokenCommitHash", entry.id))
        if entry.cold_id is not None and entry.cold_id not in view.cold:
            violations.append(Violation("BrokenLinkout", entry.id))
    for obj in view.cold.values():
        if not obj.linkout_valid or not obj.origin_locator or not view.has_blob(obj.blob_hash):
            violations.append(Violation("BrokenLinkout", obj.id))
    for buf in view.buffer.values():
        if not view.has_blob(buf.source_ptr):
            violations.append(Violation("MissingSourceBlob", buf.id))
        elif content_hash(view.read_blob(buf.source_ptr)) != buf.id:
            violations.append(Violation("NonContentHashId", buf.id))
    closures = view.branch_closures()
    for ref, branch in view.branches.items():
        if branch.state is not BranchState.OPEN and ref not in closures:
            violations.append(Violation("SilentBranchClosure", ref))
    prev = ""
    for record in view.audit_log:
        expected = chain_hash(prev, record)
        if record.chain != expected:
            violations.append(Violation("AuditLogModified", record.entry_id))
            break
        prev = record.chain
    for kind, ident in view.issued_ids():
        table = {
            "buffer": view.buffer,
            "wiki": view.entries,
            "cold": view.cold,
            "branch": view.branches,
        }[kind]
        if ident not in table:
            name = "SilentBranchClosure" if kind == "branch" else "HardDelete"
            violations.append(Violation(name, ident))
    return violations
