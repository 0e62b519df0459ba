"""Conformance rules evaluated over a recorded event stream.

Each rule is a small class with a ``name`` and a ``check(events)`` method
that yields violations. ``run_trace`` parses a JSONL trace and runs every
rule; an empty result means the trace is legal.
"""

from __future__ import annotations

import json
import re
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .events import TraceEvent
from .model import MemgovError
from .triage import STRUCTURAL_REASONS

HEX64 = re.compile(r"^[0-9a-f]{64}$")
DECAY_TERMS = ("recency", "frequency", "utility", "gravity", "wear")
SLEEP_OPS = frozenset({"contextualize", "consolidate", "decay", "audit"})
SNAPSHOT_OPS = frozenset({"consolidate", "audit"})
DELETE_OPS = frozenset({"delete", "hard-delete", "blob-delete", "cold-delete", "branch-delete"})


class MalformedTrace(MemgovError):
    pass


@dataclass(frozen=True)
class Violation:
    rule: str
    seq: int
    detail: str

    def to_json(self) -> str:
        return json.dumps({"rule": self.rule, "seq": self.seq, "detail": self.detail}, sort_keys=True)


def parse_trace(lines: Iterable[str]) -> list[TraceEvent]:
    events: list[TraceEvent] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedTrace(f"line {lineno}: {exc.msg}") from exc
        if not isinstance(obj, dict) or not {"tick", "seq", "op"} <= obj.keys():
            raise MalformedTrace(f"line {lineno}: events need tick, seq and op")
        if not isinstance(obj["tick"], int) or not isinstance(obj["seq"], int):
            raise MalformedTrace(f"line {lineno}: tick and seq must be integers")
        ev = TraceEvent.from_dict(obj)
        if events and (ev.tick, ev.seq) <= (events[-1].tick, events[-1].seq):
            raise MalformedTrace(f"line {lineno}: events out of (tick, seq) order")
        events.append(ev)
    return events


# -- grouping helpers --------------------------------------------------------

def ingest_windows(events: list[TraceEvent]) -> Iterator[list[TraceEvent]]:
    """Events inside each ingest-start .. ingest-end bracket, by task."""
    open_: dict[str, list[TraceEvent]] = {}
    for ev in events:
        task = ev.payload.get("task")
        if ev.op == "ingest-start":
            open_[task] = [ev]
        elif task in open_:
            open_[task].append(ev)
            if ev.op == "ingest-end":
                yield open_.pop(task)
    yield from open_.values()


def runs(events: list[TraceEvent]) -> Iterator[tuple[str, list[TraceEvent]]]:
    """(operation, events) per sleep-cycle run, delimited by run-start .. run-end."""
    open_: dict[str, list[TraceEvent]] = {}
    ops: dict[str, str] = {}
    for ev in events:
        task = ev.payload.get("task")
        if ev.op == "run-start":
            open_[task] = [ev]
            ops[task] = ev.payload.get("operation", "")
        elif task in open_:
            open_[task].append(ev)
            if ev.op in ("run-end", "run-abort"):
                yield ops.pop(task), open_.pop(task)
    for task, evs in open_.items():
        yield ops[task], evs


def _entity(ev: TraceEvent) -> str | None:
    return ev.payload.get("entry") or ev.payload.get("entity") or ev.payload.get("branch")


class Rule:
    name = ""
    invariant = ""

    def check(self, events: list[TraceEvent]) -> Iterator[Violation]:
        raise NotImplementedError

    def v(self, ev: TraceEvent, detail: str) -> Violation:
        return Violation(self.name, ev.seq, detail)


# -- ingestion ---------------------------------------------------------------

class TriageCoherenceWork(Rule):
    name = "TriageCoherenceWork"
    invariant = "ingestion performs no semantic contradiction resolution"

    def check(self, events):
        for window in ingest_windows(events):
            evidence = []
            for ev in window:
                if ev.op == "score":
                    evidence.append(f"score({ev.payload.get('kind', '?')})")
                elif ev.op in ("buffer-write", "triage-reject"):
                    reason = ev.payload.get("reason")
                    if reason is not None and reason not in STRUCTURAL_REASONS:
                        evidence.append(f"semantic rejection {reason!r}")
            if evidence:
                yield self.v(window[0], "; ".join(evidence))


class TriageMissingIdentity(Rule):
    name = "TriageMissingIdentity"
    invariant = "every buffer write carries a content-hash id and an ingestion tick"

    def check(self, events):
        for ev in events:
            if ev.op == "buffer-write" and not HEX64.match(str(ev.payload.get("id", ""))):
                yield self.v(ev, f"buffer write without a content-hash id: {ev.payload.get('id')!r}")


class TriageDuplicateEntry(Rule):
    name = "TriageDuplicateEntry"
    invariant = "identical content never produces a second buffer entry"

    def check(self, events):
        seen: set[str] = set()
        for ev in events:
            if ev.op == "buffer-write":
                ident = ev.payload.get("id")
                if ident in seen:
                    yield self.v(ev, f"second buffer write for {ident}")
                seen.add(ident)


class TriageWikiWrite(Rule):
    name = "TriageWikiWrite"
    invariant = "ingestion never writes the active wiki"

    def check(self, events):
        for window in ingest_windows(events):
            for ev in window:
                if ev.op in ("commit", "wiki-write", "index-write"):
                    yield self.v(ev, f"{ev.op} during ingestion")


class TriageWikiRead(Rule):
    name = "TriageWikiRead"
    invariant = "ingestion never reads the active wiki"

    def check(self, events):
        for window in ingest_windows(events):
            for ev in window:
                if ev.op == "wiki-read":
                    yield self.v(ev, "wiki read during ingestion")
                    break


# -- source fitting ----------------------------------------------------------

class MissingLinkout(Rule):
    name = "MissingLinkout"
    invariant = "every fitted representation links back to its original source"

    def check(self, events):
        for ev in events:
            if ev.op == "contextualize" and not ev.payload.get("cold"):
                yield self.v(ev, f"no linkout for {ev.payload.get('source')}")


class ContextualizeOutsideCycle(Rule):
    name = "ContextualizeOutsideCycle"
    invariant = "source fitting runs only inside a scheduled sleep-cycle run"

    def check(self, events):
        inside = {id(ev) for op, evs in runs(events) if op == "contextualize" for ev in evs}
        for ev in events:
            if ev.op == "contextualize" and id(ev) not in inside:
                yield self.v(ev, "fitting outside a contextualize run")


class MissingColdObject(Rule):
    name = "MissingColdObject"
    invariant = "a cold copy exists before any fitted representation is produced"

    def check(self, events):
        cold: set[str] = set()
        for ev in events:
            if ev.op == "cold-create":
                cold.add(ev.payload.get("cold"))
            elif ev.op == "contextualize" and ev.payload.get("cold") and ev.payload["cold"] not in cold:
                yield self.v(ev, f"cold object {ev.payload['cold']} not created first")


class OriginalDiscarded(Rule):
    name = "OriginalDiscarded"
    invariant = "original sources are never discarded after fitting"

    def check(self, events):
        for ev in events:
            if ev.op in ("cold-delete", "blob-delete"):
                yield self.v(ev, f"{ev.op} of {ev.payload.get('cold') or ev.payload.get('blob')}")


# -- consolidation -----------------------------------------------------------

class PhaseOrderViolation(Rule):
    name = "PhaseOrderViolation"
    invariant = "buffer-internal scoring completes before scoring against the wiki"

    def check(self, events):
        for op, evs in runs(events):
            if op != "consolidate":
                continue
            names = [e.op for e in evs]
            if "phase2-start" not in names:
                continue
            p2 = names.index("phase2-start")
            if "phase1-end" not in names[:p2]:
                yield self.v(evs[p2], "wiki scoring without a completed buffer-internal phase")


class MissingSnapshot(Rule):
    name = "MissingSnapshot"
    invariant = "consolidation and audit runs pin a commit id and index high-water mark"

    def check(self, events):
        for op, evs in runs(events):
            if op not in SNAPSHOT_OPS:
                continue
            snap = evs[0].payload.get("snapshot") or {}
            if not (isinstance(snap, dict) and snap.get("commit_id") and "index_hwm" in snap):
                yield self.v(evs[0], f"{op} run without a snapshot")


class NonReproducible(Rule):
    name = "NonReproducible"
    invariant = "same snapshot and configuration give the same consolidation result"

    def check(self, events):
        seen: dict[tuple, str] = {}
        for ev in events:
            if ev.op != "commit" or ev.payload.get("operation") != "consolidate":
                continue
            snap = ev.payload.get("snapshot") or {}
            key = (snap.get("commit_id"), snap.get("index_hwm"), ev.payload.get("config"))
            changes = ev.payload.get("changes")
            if key in seen and seen[key] != changes:
                yield self.v(ev, f"snapshot {key[0]} produced different changes")
            seen.setdefault(key, changes)


class MultipleCommitsPerRun(Rule):
    name = "MultipleCommitsPerRun"
    invariant = "a consolidation run produces at most one commit"

    def check(self, events):
        for op, evs in runs(events):
            commits = [e for e in evs if e.op == "commit"]
            if op == "consolidate" and len(commits) > 1:
                yield self.v(commits[1], f"{len(commits)} commits in one run")


class MinorityDiscarded(Rule):
    name = "MinorityDiscarded"
    invariant = "contradicting clusters become branches, never deletions"

    def check(self, events):
        members: dict[str, str] = {}
        for ev in events:
            if ev.op == "branch-create":
                for m in ev.payload.get("members", []):
                    members[m] = ev.payload.get("branch")
            elif ev.op == "branch-delete":
                yield self.v(ev, f"branch {ev.payload.get('branch')} deleted")
            elif ev.op == "transition" and ev.payload.get("entity") in members \
                    and ev.payload.get("to") in ("expired", "rejected"):
                ent = ev.payload["entity"]
                yield self.v(ev, f"member {ent} of {members[ent]} dropped")


class NonAtomicEdges(Rule):
    name = "NonAtomicEdges"
    invariant = "edge index updates land in the same transaction as the commit"

    def check(self, events):
        for op, evs in runs(events):
            commits = {e.payload.get("commit") for e in evs if e.op == "commit"}
            index = [e for e in evs if e.op == "index-write"]
            for e in index:
                if e.payload.get("commit") not in commits:
                    yield self.v(e, "edge index written without its commit")
            if any(e.op == "run-abort" for e in evs) and index:
                yield self.v(index[0], "edge index written by an aborted run")
            if commits and len(index) > len(commits):
                yield self.v(index[-1], "edge index split across transactions")


# -- decay -------------------------------------------------------------------

class VitalityTermElimination(Rule):
    name = "VitalityTermElimination"
    invariant = "the retention score keeps all five terms"

    def check(self, events):
        for ev in events:
            if ev.op == "decay-pass" and tuple(ev.payload.get("terms", ())) != DECAY_TERMS:
                yield self.v(ev, f"terms {ev.payload.get('terms')}")


class ProtectedEntryDecayed(Rule):
    name = "ProtectedEntryDecayed"
    invariant = "entries at or above the gravity floor are never decayed"

    def check(self, events):
        for op, evs in runs(events):
            if op != "decay":
                continue
            for ev in evs:
                if ev.op not in ("compress", "archive"):
                    continue
                g, floor = ev.payload.get("g_base"), ev.payload.get("floor")
                if ev.payload.get("protected") or (
                        g is not None and floor is not None and floor > 0 and g >= floor):
                    yield self.v(ev, f"{ev.op} of protected entry {ev.payload.get('entry')}")


class DeletionInsteadOfCompression(Rule):
    name = "DeletionInsteadOfCompression"
    invariant = "decay compresses or archives; it never deletes"

    def check(self, events):
        for op, evs in runs(events):
            if op != "decay":
                continue
            for ev in evs:
                if ev.op in DELETE_OPS or (ev.op == "archive" and not ev.payload.get("cold")):
                    yield self.v(ev, f"{ev.op} of {_entity(ev)} without a cold copy")


# -- audit -------------------------------------------------------------------

class AuditPermanentDeletion(Rule):
    name = "AuditPermanentDeletion"
    invariant = "audit suspends entries virtually and never deletes them"

    def check(self, events):
        for op, evs in runs(events):
            if op != "audit":
                continue
            for ev in evs:
                if ev.op in DELETE_OPS or (ev.op == "archive" and not ev.payload.get("cold")):
                    yield self.v(ev, f"{ev.op} of {_entity(ev)} during audit")


class DegradedNotRestored(Rule):
    name = "DegradedNotRestored"
    invariant = "entries whose suspension degrades queries are restored"

    def check(self, events):
        for ev in events:
            if ev.op == "audit-record" and ev.payload.get("verdict") == "degraded" \
                    and ev.payload.get("outcome") != "restored":
                yield self.v(ev, f"{ev.payload.get('entry')} degraded but {ev.payload.get('outcome')}")


class SilentBranchClosure(Rule):
    name = "SilentBranchClosure"
    invariant = "branches close only by promotion or a recorded audit decision"

    def check(self, events):
        explained: set[str] = set()
        for ev in events:
            if ev.op == "promote":
                explained.add(ev.payload.get("branch"))
            elif ev.op == "branch-close":
                if ev.payload.get("reason") and ev.payload.get("operation") == "audit":
                    explained.add(ev.payload.get("branch"))
                else:
                    yield self.v(ev, f"branch {ev.payload.get('branch')} closed without reason")
            elif ev.op == "transition" and ev.payload.get("to") in ("closed", "promoted") \
                    and str(ev.payload.get("entity", "")).startswith("branch/") \
                    and ev.payload["entity"] not in explained:
                yield self.v(ev, f"branch {ev.payload['entity']} closed silently")


class AuditRecordAfterTransition(Rule):
    name = "AuditRecordAfterTransition"
    invariant = "audit results are recorded before any state change they justify"

    def check(self, events):
        for op, evs in runs(events):
            if op != "audit":
                continue
            recorded: set[str] = set()
            for ev in evs:
                if ev.op in ("audit-record", "branch-close"):
                    recorded.add(_entity(ev))
                elif ev.op in ("transition", "archive", "gravity-reduce") and _entity(ev) not in recorded:
                    yield self.v(ev, f"{ev.op} of {_entity(ev)} before its audit record")
        for op, evs in runs(events):
            if op != "decay":
                continue
            recorded = set()
            for ev in evs:
                if ev.op == "audit-record":
                    recorded.add(_entity(ev))
                elif ev.op == "archive" and _entity(ev) not in recorded:
                    yield self.v(ev, f"archive of {_entity(ev)} before its audit record")


# -- general -----------------------------------------------------------------

class ReadBlocked(Rule):
    name = "ReadBlocked"
    invariant = "the wiki stays readable while sleep-cycle runs are in flight"

    def check(self, events):
        for ev in events:
            if ev.op in ("read", "hot-complete") and (ev.payload.get("blocked") or (
                    ev.payload.get("latency") is not None and ev.payload.get("budget") is not None
                    and ev.payload["latency"] > ev.payload["budget"])):
                yield self.v(ev, "hot-path read blocked past its budget")


class HardDelete(Rule):
    name = "HardDelete"
    invariant = "no object is ever permanently deleted"

    def check(self, events):
        for ev in events:
            if ev.op in ("delete", "hard-delete"):
                yield self.v(ev, f"hard delete of {_entity(ev) or ev.payload.get('id')}")


class LaneViolation(Rule):
    name = "LaneViolation"
    invariant = "sleep-cycle operations never run on the hot lane"

    def check(self, events):
        for ev in events:
            if ev.op == "run-start" and ev.payload.get("lane") == "hot":
                yield self.v(ev, f"{ev.payload.get('operation')} on the hot lane")


RULES: tuple[Rule, ...] = (
    TriageCoherenceWork(), TriageMissingIdentity(), TriageDuplicateEntry(), TriageWikiWrite(),
    TriageWikiRead(),
    MissingLinkout(), ContextualizeOutsideCycle(), MissingColdObject(), OriginalDiscarded(),
    PhaseOrderViolation(), MissingSnapshot(), NonReproducible(), MultipleCommitsPerRun(),
    MinorityDiscarded(), NonAtomicEdges(),
    VitalityTermElimination(), ProtectedEntryDecayed(), DeletionInsteadOfCompression(),
    AuditPermanentDeletion(), DegradedNotRestored(), SilentBranchClosure(),
    AuditRecordAfterTransition(),
    ReadBlocked(), HardDelete(), LaneViolation(),
)


def check_events(events: list[TraceEvent], rules: Iterable[Rule] = RULES) -> list[Violation]:
    out: list[Violation] = []
    for rule in rules:
        out.extend(rule.check(events))
    return sorted(out, key=lambda v: (v.seq, v.rule))


def run_trace(path: str | Path) -> list[Violation]:
    with open(path, encoding="utf-8") as fh:
        events = parse_trace(fh)
    return check_events(events)


def violated_rules(violations: Iterable[Violation]) -> set[str]:
    return {v.rule for v in violations}


def by_rule(violations: Iterable[Violation]) -> dict[str, list[Violation]]:
    out: dict[str, list[Violation]] = defaultdict(list)
    for v in violations:
        out[v.rule].append(v)
    return dict(out)
