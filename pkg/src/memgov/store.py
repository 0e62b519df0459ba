"""Content-addressed blob store plus a versioned metadata index.

Every commit produces a new immutable :class:`State`; readers hold a
:class:`View` bound to a :class:`Snapshot` and never take a lock. Hot-path
appends (buffer rows, usage records) go to append-only logs that advance the
index high-water mark without moving HEAD, so a sleep-cycle run opened
against an older snapshot can still commit.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import os
import sqlite3
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable

from . import codec
from .content import content_hash
from .events import EventLog, current_task
from .model import (
    AuditRecord,
    BranchState,
    BufferEntry,
    ClaimTuple,
    ColdObject,
    Edge,
    EdgeKind,
    MemgovError,
    MinorityBranch,
    Outcome,
    TransitionRecord,
    UnknownEntry,
    WikiEntry,
    WikiState,
    chain_hash,
)

ROOT_COMMIT = "0" * 64


class StorageError(MemgovError):
    pass


class StorageFull(StorageError):
    pass


class EmptyContent(StorageError):
    pass


class StaleSnapshot(StorageError):
    pass


class AtomicityFailure(StorageError):
    pass


class AlreadyArchived(StorageError):
    pass


class InjectedCrash(Exception):
    """Raised by a fault hook to simulate a process dying mid-commit."""


@dataclass(frozen=True)
class Snapshot:
    commit_id: str
    index_hwm: int

    def to_dict(self) -> dict[str, Any]:
        return {"commit_id": self.commit_id, "index_hwm": self.index_hwm}


@dataclass
class Changeset:
    blob_writes: list[bytes] = field(default_factory=list)
    entry_upserts: list[WikiEntry] = field(default_factory=list)
    edge_writes: list[Edge] = field(default_factory=list)
    branch_ops: list[MinorityBranch] = field(default_factory=list)
    tombstones: list[str] = field(default_factory=list)
    buffer_updates: list[BufferEntry] = field(default_factory=list)
    cold_objects: list[ColdObject] = field(default_factory=list)
    audit_records: list[AuditRecord] = field(default_factory=list)
    transitions: list[TransitionRecord] = field(default_factory=list)
    branch_closures: dict[str, str] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not any(
            (self.blob_writes, self.entry_upserts, self.edge_writes, self.branch_ops,
             self.tombstones, self.buffer_updates, self.cold_objects, self.audit_records,
             self.transitions, self.branch_closures, self.meta)
        )

    def to_body(self) -> dict[str, Any]:
        body = codec.encode(self)
        body["blob_writes"] = sorted({content_hash(b) for b in self.blob_writes})
        return body

    @classmethod
    def from_body(cls, body: dict[str, Any], blobs: dict[str, bytes]) -> "Changeset":
        return cls(
            blob_writes=[blobs[h] for h in body["blob_writes"]],
            entry_upserts=[codec.wiki_entry_from(d) for d in body["entry_upserts"]],
            edge_writes=[codec.edge_from(d) for d in body["edge_writes"]],
            branch_ops=[codec.branch_from(d) for d in body["branch_ops"]],
            tombstones=list(body["tombstones"]),
            buffer_updates=[codec.buffer_entry_from(d) for d in body["buffer_updates"]],
            cold_objects=[codec.cold_from(d) for d in body["cold_objects"]],
            audit_records=[codec.audit_from(d) for d in body["audit_records"]],
            transitions=[codec.transition_from(d) for d in body["transitions"]],
            branch_closures=dict(body["branch_closures"]),
            meta=dict(body["meta"]),
        )


@dataclass(frozen=True)
class State:
    """One committed version of the index. Treated as immutable."""

    commit_id: str
    seq: int
    parent: str | None
    tick: int
    entries: dict[str, WikiEntry]
    edges: dict[tuple[str, str, str], Edge]
    branches: dict[str, MinorityBranch]
    buffer: dict[str, BufferEntry]
    cold: dict[str, ColdObject]
    audit_log: tuple[AuditRecord, ...]
    closures: dict[str, str]
    meta: dict[str, Any]

    @classmethod
    def empty(cls) -> "State":
        return cls(ROOT_COMMIT, 0, None, 0, {}, {}, {}, {}, {}, (), {}, {})

    def digest(self) -> str:
        body = {
            "commit": self.commit_id,
            "entries": [codec.encode(self.entries[k]) for k in sorted(self.entries)],
            "edges": [codec.encode(self.edges[k]) for k in sorted(self.edges)],
            "branches": [codec.encode(self.branches[k]) for k in sorted(self.branches)],
            "buffer": [codec.encode(self.buffer[k]) for k in sorted(self.buffer)],
            "cold": [codec.encode(self.cold[k]) for k in sorted(self.cold)],
            "audit": [codec.encode(r) for r in self.audit_log],
            "meta": self.meta,
        }
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


@dataclass(frozen=True)
class UsageRecord:
    seq: int
    tick: int
    query: tuple[ClaimTuple, ...]
    accessed: tuple[str, ...]
    outcomes: tuple[tuple[str, float], ...] = ()


def cold_id_for(blob_hash: str, locator: str, generation: int = 0) -> str:
    return hashlib.sha256(f"cold:{blob_hash}:{locator}:{generation}".encode()).hexdigest()


def archive_changes(entry: WikiEntry, tick: int) -> tuple[WikiEntry, ColdObject, TransitionRecord]:
    """Records that archive ``entry``: tombstone version, cold copy, transition line."""
    from .model import transition

    if entry.state is WikiState.ARCHIVED:
        raise AlreadyArchived(entry.id)
    locator = f"entry:{entry.id}"
    cold = ColdObject(cold_id_for(entry.blob_hash, locator), entry.blob_hash, locator)
    records: list[TransitionRecord] = []

    class _Sink:
        def append(self, rec: TransitionRecord) -> None:
            records.append(rec)

    archived = transition(entry, "archive", tick=tick, log=_Sink())  # type: ignore[arg-type]
    archived = replace(archived, tombstone_cold_id=cold.id)
    return archived, cold, records[0]


def _normalize_usage(entry: WikiEntry) -> WikiEntry:
    # usage-derived fields live in the usage log, never in the committed row
    if entry.access_count == 0 and entry.last_accessed == entry.created_at and not entry.utility_trace:
        return entry
    return replace(entry, access_count=0, last_accessed=entry.created_at, utility_trace=())


def apply_changeset(state: State, cs: Changeset, commit_id: str, seq: int, tick: int,
                    has_blob: Callable[[str], bool]) -> tuple[State, list[tuple[str, str]]]:
    """Pure application of a changeset; raises before anything is published."""
    entries = dict(state.entries)
    edges = dict(state.edges)
    branches = dict(state.branches)
    buffer = dict(state.buffer)
    cold = dict(state.cold)
    closures = dict(state.closures)
    meta = dict(state.meta)
    issued: list[tuple[str, str]] = []
    written = {content_hash(b) for b in cs.blob_writes}

    def blob_ok(h: str) -> bool:
        return h in written or has_blob(h)

    upserts = {e.id: e for e in cs.entry_upserts}
    archival_ok = {r.entry_id for r in cs.audit_records if r.outcome is Outcome.ARCHIVED}
    archival_ok |= {r.entry_id for r in state.audit_log if r.outcome is Outcome.ARCHIVED}
    for ident in cs.tombstones:
        prior = state.entries.get(ident)
        if prior is None:
            raise UnknownEntry(ident)
        if prior.state is WikiState.ARCHIVED:
            raise AlreadyArchived(ident)
        new = upserts.get(ident)
        if new is None or new.state is not WikiState.ARCHIVED:
            raise AtomicityFailure(f"tombstone for {ident} lacks its archived record")
        if ident not in archival_ok:
            raise AtomicityFailure(f"tombstone for {ident} lacks an archival decision record")
    for entry in cs.entry_upserts:
        prior = state.entries.get(entry.id)
        if prior is not None and prior.state is WikiState.ARCHIVED:
            raise AlreadyArchived(entry.id)
        if entry.state is WikiState.ARCHIVED and entry.id not in cs.tombstones:
            raise AtomicityFailure(f"{entry.id} archived without a tombstone")
        if entry.commit_hash == "":
            entry = replace(entry, commit_hash=commit_id)
        if not blob_ok(entry.blob_hash):
            raise AtomicityFailure(f"entry {entry.id} references missing blob {entry.blob_hash}")
        if prior is None:
            issued.append(("wiki", entry.id))
        entries[entry.id] = _normalize_usage(entry)
    for edge in cs.edge_writes:
        edges[edge.key] = edge
    for obj in cs.cold_objects:
        if not obj.linkout_valid:
            raise AtomicityFailure(f"cold object {obj.id} without a valid linkout")
        prior_obj = cold.get(obj.id)
        if prior_obj is None:
            issued.append(("cold", obj.id))
        elif prior_obj.blob_hash != obj.blob_hash:
            raise AtomicityFailure(f"cold object {obj.id} cannot be overwritten")
        if not blob_ok(obj.blob_hash):
            raise AtomicityFailure(f"cold object {obj.id} references missing blob")
        cold[obj.id] = obj
    for ref, reason in cs.branch_closures.items():
        closures[ref] = reason
    for branch in cs.branch_ops:
        if branch.branch_ref not in branches:
            issued.append(("branch", branch.branch_ref))
        if branch.state is not BranchState.OPEN and branch.branch_ref not in closures:
            raise AtomicityFailure(f"branch {branch.branch_ref} closed without a record")
        branches[branch.branch_ref] = branch
    for buf in cs.buffer_updates:
        buffer[buf.id] = buf
    log = list(state.audit_log)
    prev = log[-1].chain if log else ""
    for record in cs.audit_records:
        record = replace(record, chain=chain_hash(prev, record))
        prev = record.chain
        log.append(record)
    meta.update(cs.meta)
    new_state = State(commit_id, seq, state.commit_id, tick, entries, edges, branches, buffer,
                      cold, tuple(log), closures, meta)
    return new_state, issued


_SCHEMA = """
CREATE TABLE IF NOT EXISTS commits (seq INTEGER PRIMARY KEY, commit_id TEXT UNIQUE NOT NULL,
    parent TEXT, tick INTEGER NOT NULL, kind TEXT NOT NULL, body TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS entries (id TEXT NOT NULL, seq INTEGER NOT NULL, commit_hash TEXT,
    vitality REAL, gravity REAL, quarantined INTEGER, last_accessed INTEGER, state TEXT,
    body TEXT NOT NULL, PRIMARY KEY (id, seq));
CREATE INDEX IF NOT EXISTS entries_vitality ON entries (vitality);
CREATE TABLE IF NOT EXISTS edges (src TEXT NOT NULL, dst TEXT NOT NULL, kind TEXT NOT NULL,
    seq INTEGER NOT NULL, weight REAL, live INTEGER, PRIMARY KEY (src, dst, kind, seq));
CREATE TABLE IF NOT EXISTS audit_log (seq INTEGER NOT NULL, n INTEGER NOT NULL, entry_id TEXT,
    ts INTEGER, result TEXT, outcome TEXT, body TEXT NOT NULL, PRIMARY KEY (seq, n));
CREATE TABLE IF NOT EXISTS branches (ref TEXT NOT NULL, seq INTEGER NOT NULL, state TEXT,
    body TEXT NOT NULL, PRIMARY KEY (ref, seq));
CREATE TABLE IF NOT EXISTS buffer (id TEXT NOT NULL, seq INTEGER NOT NULL, kind TEXT NOT NULL,
    state TEXT, body TEXT NOT NULL, PRIMARY KEY (id, seq));
CREATE TABLE IF NOT EXISTS usage (seq INTEGER PRIMARY KEY, body TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
"""


class View:
    """Read-only access to the system as of one snapshot."""

    def __init__(self, store: "Store", state: State, hwm: int) -> None:
        self._store = store
        self.state = state
        self.hwm = hwm
        self._entries: dict[str, WikiEntry] | None = None
        self._buffer: dict[str, BufferEntry] | None = None
        self._live: list[WikiEntry] | None = None
        self._read_tasks: set[str | None] = set()

    @property
    def snapshot(self) -> Snapshot:
        return Snapshot(self.state.commit_id, self.hwm)

    def _note_wiki_read(self) -> None:
        task = current_task()
        if task not in self._read_tasks:
            self._read_tasks.add(task)
            if self._store.events is not None:
                self._store.events.emit("wiki-read", snapshot=self.snapshot.to_dict())

    @property
    def entries(self) -> dict[str, WikiEntry]:
        self._note_wiki_read()
        if self._entries is None:
            self._entries = {k: self._store._overlay(e, self.hwm) for k, e in self.state.entries.items()}
        return self._entries

    def entry(self, ident: str) -> WikiEntry | None:
        return self.entries.get(ident)

    def live_entries(self) -> list[WikiEntry]:
        entries = self.entries
        if self._live is None:
            self._live = [entries[k] for k in sorted(entries) if entries[k].live]
        return list(self._live)

    @property
    def edges(self) -> dict[tuple[str, str, str], Edge]:
        return self.state.edges

    def dependency_edges(self) -> list[Edge]:
        """Live dependency edges whose endpoints are both live entries."""
        entries = self.entries
        out = []
        for key in sorted(self.state.edges):
            edge = self.state.edges[key]
            if edge.kind is not EdgeKind.DEPENDENCY or not edge.live:
                continue
            a, b = entries.get(edge.src), entries.get(edge.dst)
            if a is not None and b is not None and a.live and b.live:
                out.append(edge)
        return out

    @property
    def branches(self) -> dict[str, MinorityBranch]:
        return self.state.branches

    def open_branches(self) -> list[MinorityBranch]:
        return [self.state.branches[k] for k in sorted(self.state.branches)
                if self.state.branches[k].state is BranchState.OPEN]

    @property
    def buffer(self) -> dict[str, BufferEntry]:
        if self._buffer is None:
            merged: dict[str, BufferEntry] = {}
            for seq, entry in self._store._buffer_log:
                if seq > self.hwm:
                    break
                merged[entry.id] = entry
            merged.update(self.state.buffer)
            self._buffer = merged
        return self._buffer

    def pending_buffer(self) -> list[BufferEntry]:
        from .model import BufferState

        pending = [b for b in self.buffer.values() if b.state is BufferState.PENDING]
        return sorted(pending, key=lambda b: (b.ingested_at, b.id))

    @property
    def cold(self) -> dict[str, ColdObject]:
        return self.state.cold

    @property
    def audit_log(self) -> tuple[AuditRecord, ...]:
        return self.state.audit_log

    @property
    def meta(self) -> dict[str, Any]:
        return self.state.meta

    def query_log(self) -> list[UsageRecord]:
        log = self._store._usage
        idx = bisect.bisect_right([u.seq for u in log], self.hwm)
        return log[:idx]

    def has_commit(self, commit_id: str) -> bool:
        return commit_id in self._store._commits

    def has_blob(self, blob_hash: str) -> bool:
        return self._store.has_blob(blob_hash)

    def read_blob(self, blob_hash: str) -> bytes:
        return self._store.get_blob(blob_hash)

    def issued_ids(self) -> Iterable[tuple[str, str]]:
        for seq, kind, ident in self._store._issued:
            if seq <= self.hwm:
                yield kind, ident

    def branch_closures(self) -> dict[str, str]:
        return self.state.closures

    def digest(self) -> str:
        return self.state.digest()


class Store:
    """Single-writer, many-reader persistence layer.

    ``root=None`` keeps everything in memory (simulations). With a root
    directory, blobs live under ``objects/<first2>/<hash>``, the index in
    ``index.db`` and the current commit id in ``HEAD``.
    """

    def __init__(self, root: str | os.PathLike[str] | None = None, *,
                 events: EventLog | None = None, max_blobs: int | None = None,
                 fault: Callable[[str], None] | None = None) -> None:
        self.root = Path(root) if root is not None else None
        self.events = events
        self.max_blobs = max_blobs
        self.fault = fault
        self._blobs: dict[str, bytes] = {}
        self._head = State.empty()
        self._commits: dict[str, State] = {ROOT_COMMIT: self._head}
        self._by_seq: list[State] = [self._head]
        self._buffer_log: list[tuple[int, BufferEntry]] = []
        self._buffer_ids: set[str] = set()
        self._usage: list[UsageRecord] = []
        self._access: dict[str, list[tuple[int, int]]] = {}
        self._overlay_cache: dict[str, tuple[WikiEntry, tuple[int, int], WikiEntry]] = {}
        self._utility: dict[str, list[tuple[int, int, float]]] = {}
        self._issued: list[tuple[int, str, str]] = []
        self._transitions: list[tuple[int, TransitionRecord]] = []
        self._seq = 0
        self._seq_lock = threading.Lock()
        self._writer = threading.Lock()
        self._db: sqlite3.Connection | None = None
        if self.root is not None:
            self._open_disk()

    # -- blobs -----------------------------------------------------------

    def put_blob(self, content: bytes) -> str:
        if not content:
            raise EmptyContent("blob content must be non-empty")
        digest = content_hash(content)
        if digest in self._blobs:
            return digest
        if self.max_blobs is not None and len(self._blobs) >= self.max_blobs:
            raise StorageFull(f"blob store holds {len(self._blobs)} objects")
        if self.root is not None:
            path = self.root / "objects" / digest[:2] / digest
            if not path.exists():
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_bytes(content)
                os.replace(tmp, path)
        self._blobs[digest] = content
        return digest

    def get_blob(self, blob_hash: str) -> bytes:
        try:
            return self._blobs[blob_hash]
        except KeyError:
            raise UnknownEntry(f"no blob {blob_hash}") from None

    def has_blob(self, blob_hash: str) -> bool:
        return blob_hash in self._blobs

    def blob_count(self) -> int:
        return len(self._blobs)

    # -- snapshots and views --------------------------------------------

    @property
    def head(self) -> State:
        return self._head

    def take_snapshot(self) -> Snapshot:
        with self._seq_lock:
            return Snapshot(self._head.commit_id, self._seq)

    def view(self, snapshot: Snapshot | None = None) -> View:
        if snapshot is None:
            snapshot = self.take_snapshot()
        try:
            state = self._commits[snapshot.commit_id]
        except KeyError:
            raise UnknownEntry(f"unknown commit {snapshot.commit_id}") from None
        return View(self, state, snapshot.index_hwm)

    def commit_ids(self) -> list[str]:
        return [s.commit_id for s in self._by_seq]

    def transition_log(self) -> list[TransitionRecord]:
        return [rec for _, rec in self._transitions]

    # -- hot-path appends ------------------------------------------------

    def _next_seq(self) -> int:
        with self._seq_lock:
            self._seq += 1
            return self._seq

    def append_buffer(self, entry: BufferEntry, transitions: Iterable[TransitionRecord] = ()) -> bool:
        """Append a buffer row. Returns False (and writes nothing) for a known id."""
        with self._seq_lock:
            if entry.id in self._buffer_ids:
                return False
            self._buffer_ids.add(entry.id)
            self._seq += 1
            seq = self._seq
            self._buffer_log.append((seq, entry))
            self._issued.append((seq, "buffer", entry.id))
            for rec in transitions:
                self._transitions.append((seq, rec))
        if self._db is not None:
            with self._db:
                self._db.execute(
                    "INSERT INTO buffer VALUES (?, ?, 'ingest', ?, ?)",
                    (entry.id, seq, entry.state.value,
                     json.dumps({"entry": codec.encode(entry),
                                 "transitions": [codec.encode(t) for t in transitions]})),
                )
        return True

    def known_buffer_id(self, ident: str) -> bool:
        return ident in self._buffer_ids

    def record_usage(self, tick: int, query: Iterable[ClaimTuple], accessed: Iterable[str],
                     outcomes: dict[str, float] | None = None) -> int:
        outcome_items = tuple(sorted((outcomes or {}).items()))
        with self._seq_lock:
            self._seq += 1
            seq = self._seq
            record = UsageRecord(seq, tick, tuple(query), tuple(accessed), outcome_items)
            self._index_usage(record)
        if self._db is not None:
            with self._db:
                self._db.execute("INSERT INTO usage VALUES (?, ?)", (seq, codec.dumps(record)))
        return seq

    def _index_usage(self, record: UsageRecord) -> None:
        self._usage.append(record)
        for ident in record.accessed:
            self._access.setdefault(ident, []).append((record.seq, record.tick))
        for ident, outcome in record.outcomes:
            self._utility.setdefault(ident, []).append((record.seq, record.tick, outcome))

    def _overlay(self, entry: WikiEntry, hwm: int) -> WikiEntry:
        accesses = self._access.get(entry.id)
        utility = self._utility.get(entry.id)
        if not accesses and not utility:
            return entry
        na = bisect.bisect_right(accesses, (hwm, float("inf"))) if accesses else 0
        nu = bisect.bisect_right(utility, (hwm, float("inf"), float("inf"))) if utility else 0
        cached = self._overlay_cache.get(entry.id)
        if cached is not None and cached[0] is entry and cached[1] == (na, nu):
            return cached[2]
        changes: dict[str, Any] = {}
        if na:
            changes["access_count"] = na
            changes["last_accessed"] = max(entry.created_at, accesses[na - 1][1])
        if nu:
            changes["utility_trace"] = tuple((t, o) for _, t, o in utility[:nu])
        result = replace(entry, **changes) if changes else entry
        self._overlay_cache[entry.id] = (entry, (na, nu), result)
        return result

    # -- commits -----------------------------------------------------------

    def _hit(self, point: str) -> None:
        if self.fault is not None:
            self.fault(point)

    def commit(self, changeset: Changeset, snapshot: Snapshot, *, tick: int,
               kind: str = "commit", body: dict[str, Any] | None = None) -> str:
        """Publish ``changeset`` as exactly one new commit, or nothing at all.

        ``body`` may pass in an already computed ``changeset.to_body()``.
        """
        with self._writer:
            if self._head.commit_id != snapshot.commit_id:
                raise StaleSnapshot(
                    f"HEAD moved from {snapshot.commit_id[:12]} to {self._head.commit_id[:12]}"
                )
            if body is None:
                body = changeset.to_body()
            commit_id = hashlib.sha256(
                codec.dumps_encoded({"parent": self._head.commit_id, "tick": tick, "kind": kind,
                                     "changeset": body}).encode()
            ).hexdigest()
            with self._seq_lock:
                seq = self._seq + 1
            new_state, issued = apply_changeset(self._head, changeset, commit_id, seq, tick,
                                                self.has_blob)
            self._hit("blobs")
            for blob in changeset.blob_writes:
                self.put_blob(blob)
                self._hit("blob")
            if self._db is not None:
                self._persist(commit_id, seq, tick, kind, body, new_state, changeset)
            self._hit("publish")
            with self._seq_lock:
                # hot-path appends may have advanced the counter meanwhile
                self._seq = max(self._seq + 1, seq)
                seq = self._seq
                new_state = replace(new_state, seq=seq)
                for k, ident in issued:
                    self._issued.append((seq, k, ident))
                for rec in changeset.transitions:
                    self._transitions.append((seq, rec))
                self._commits[commit_id] = new_state
                self._by_seq.append(new_state)
                self._head = new_state
            if self.root is not None:
                self._write_head(commit_id)
            return commit_id

    # -- disk ---------------------------------------------------------------

    def _write_head(self, commit_id: str) -> None:
        assert self.root is not None
        tmp = self.root / "HEAD.tmp"
        tmp.write_text(commit_id + "\n")
        os.replace(tmp, self.root / "HEAD")

    def _persist(self, commit_id: str, seq: int, tick: int, kind: str, body: dict[str, Any],
                 state: State, cs: Changeset) -> None:
        assert self._db is not None
        db = self._db
        try:
            db.execute("BEGIN")
            db.execute("INSERT INTO commits VALUES (?, ?, ?, ?, ?, ?)",
                       (seq, commit_id, state.parent, tick, kind, json.dumps(body, sort_keys=True)))
            for entry in cs.entry_upserts:
                e = state.entries[entry.id]
                db.execute("INSERT INTO entries VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?)",
                           (e.id, seq, e.commit_hash, e.vitality, e.gravity_base, int(e.quarantined),
                            e.last_accessed, e.state.value, codec.dumps(e)))
            self._hit("index")
            for edge in cs.edge_writes:
                db.execute("INSERT OR REPLACE INTO edges VALUES (?, ?, ?, ?, ?, ?)",
                           (edge.src, edge.dst, edge.kind.value, seq, edge.weight, int(edge.live)))
            for n, rec in enumerate(state.audit_log[len(state.audit_log) - len(cs.audit_records):]):
                db.execute("INSERT INTO audit_log VALUES (?, ?, ?, ?, ?, ?, ?)",
                           (seq, n, rec.entry_id, rec.ts, rec.suspension_result.value,
                            rec.outcome.value, codec.dumps(rec)))
            for branch in cs.branch_ops:
                db.execute("INSERT INTO branches VALUES (?, ?, ?, ?)",
                           (branch.branch_ref, seq, branch.state.value, codec.dumps(branch)))
            for buf in cs.buffer_updates:
                db.execute("INSERT OR REPLACE INTO buffer VALUES (?, ?, 'state', ?, ?)",
                           (buf.id, seq, buf.state.value, codec.dumps(buf)))
            db.execute("INSERT OR REPLACE INTO meta VALUES ('head', ?)", (commit_id,))
            self._hit("index-commit")
            db.execute("COMMIT")
        except BaseException:
            db.execute("ROLLBACK")
            raise

    def _open_disk(self) -> None:
        assert self.root is not None
        self.root.mkdir(parents=True, exist_ok=True)
        objects = self.root / "objects"
        if objects.exists():
            for path in objects.glob("*/*"):
                if path.suffix == ".tmp":
                    continue
                self._blobs[path.name] = path.read_bytes()
        self._db = sqlite3.connect(self.root / "index.db", isolation_level=None,
                                   check_same_thread=False)
        self._db.executescript(_SCHEMA)
        events: list[tuple[int, str, Any]] = []
        for seq, body in self._db.execute("SELECT seq, body FROM buffer WHERE kind='ingest'"):
            events.append((seq, "buffer", json.loads(body)))
        for seq, body in self._db.execute("SELECT seq, body FROM usage"):
            events.append((seq, "usage", json.loads(body)))
        for seq, cid, tick, kind, body in self._db.execute(
                "SELECT seq, commit_id, tick, kind, body FROM commits"):
            events.append((seq, "commit", (cid, tick, kind, json.loads(body))))
        events.sort(key=lambda item: item[0])
        for seq, kind, payload in events:
            self._seq = seq
            if kind == "buffer":
                entry = codec.buffer_entry_from(payload["entry"])
                self._buffer_log.append((seq, entry))
                self._buffer_ids.add(entry.id)
                self._issued.append((seq, "buffer", entry.id))
                for t in payload["transitions"]:
                    self._transitions.append((seq, codec.transition_from(t)))
            elif kind == "usage":
                self._index_usage(UsageRecord(
                    payload["seq"], payload["tick"], codec.claims_from(payload["query"]),
                    tuple(payload["accessed"]), tuple((k, v) for k, v in payload["outcomes"])))
            else:
                cid, tick, ckind, body = payload
                cs = Changeset.from_body(body, self._blobs)
                state, issued = apply_changeset(self._head, cs, cid, seq, tick, self.has_blob)
                for k, ident in issued:
                    self._issued.append((seq, k, ident))
                for rec in cs.transitions:
                    self._transitions.append((seq, rec))
                self._commits[cid] = state
                self._by_seq.append(state)
                self._head = state
        self._write_head(self._head.commit_id)

    def close(self) -> None:
        if self._db is not None:
            self._db.close()
            self._db = None
