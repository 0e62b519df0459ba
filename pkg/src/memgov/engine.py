"""Wires the store, the five operations and the trace event log together.

Each sleep-cycle operation takes a snapshot, plans against it, and commits
the plan as exactly one commit. Hot-path calls (ingest, read) never wait on
a sleep-cycle run.
"""

from __future__ import annotations

import hashlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

from . import codec
from .audit import AuditParams, plan_audit
from .consolidate import ConsolidationParams, plan_consolidate
from .contextualize import plan_contextualize
from .decay import DecayConfig, plan_decay
from .events import EventLog, task_scope
from .gravity import GravityParams, GravityRow, gravity_table
from .model import ClaimTuple, MemgovError, OriginChannel, WikiEntry
from .scorer import ClaimScorer, Scorer
from .store import Changeset, Snapshot, Store, View
from .triage import Accepted, BufferLane, Rejected, TriageConfig, triage


class WindowAborted(MemgovError):
    """Conditions changed mid-run; the uncommitted plan was discarded."""


@dataclass(frozen=True)
class EngineConfig:
    ticks_per_cycle: int = 100
    read_k: int = 3
    triage: TriageConfig = TriageConfig()
    gravity: GravityParams = GravityParams()
    decay: DecayConfig = DecayConfig()
    consolidation: ConsolidationParams = ConsolidationParams()
    audit: AuditParams = AuditParams()

    def fingerprint(self) -> str:
        return hashlib.sha256(codec.dumps(self).encode()).hexdigest()[:16]


@dataclass
class RunResult:
    op: str
    commit_id: str | None
    snapshot: Snapshot
    plan: Any
    rows: list[dict[str, Any]] = field(default_factory=list)


class Engine:
    def __init__(self, store: Store | None = None, config: EngineConfig = EngineConfig(),
                 scorer: Scorer | None = None, events: EventLog | None = None,
                 trace: bool = True) -> None:
        self.config = config
        self.scorer = scorer or ClaimScorer()
        self.now = 0
        self._clock_lock = threading.Lock()
        self.events = events if events is not None else EventLog(lambda: self.now, enabled=trace)
        self.store = store if store is not None else Store(events=self.events)
        if self.store.events is None:
            self.store.events = self.events
        self.lane = BufferLane(self.store)
        head = self.store.head
        self.cycle = int(head.meta.get("cycle", 0))
        last = [int(head.meta.get("tick", 0))]
        last += [e.ingested_at for _, e in self.store._buffer_log[-1:]]
        last += [u.tick for u in self.store._usage[-1:]]
        self.now = max(last)
        # test hooks: called with the op name after planning / before commit
        self.plan_hook: Callable[[str], None] | None = None
        self.abort_check: Callable[[str], bool] | None = None
        self._runs = itertools.count(1)
        self._closes_window = False

    # -- clock -------------------------------------------------------------

    def advance(self, ticks: int = 1) -> int:
        with self._clock_lock:
            self.now += ticks
            return self.now

    # -- hot path ----------------------------------------------------------

    def ingest(self, raw: bytes | str, channel: OriginChannel | str = OriginChannel.CONVERSATION,
               **kw: Any) -> Accepted | Rejected:
        kw.setdefault("task", f"ingest-{next(self._runs)}")
        return triage(raw, channel, self.lane, tick=self.now, cycle=self.cycle, events=self.events,
                      config=self.config.triage, **kw)

    def read(self, query: Sequence[ClaimTuple], k: int | None = None,
             outcomes: Callable[[WikiEntry], float] | None = None,
             snapshot: Snapshot | None = None) -> list[str]:
        """Top-k live entries for ``query``; records the access in the usage log."""
        with task_scope(f"read-{next(self._runs)}"):
            view = self.store.view(snapshot)
            live = [e for e in view.live_entries()]
            ids = self.scorer.rank(query, live, k or self.config.read_k) if hasattr(self.scorer, "rank") else []
            scores = None
            if outcomes is not None:
                scores = {i: outcomes(view.entries[i]) for i in ids}
            self.store.record_usage(self.now, query, ids, scores)
            self.events.emit("read", snapshot=view.snapshot.to_dict(), hits=len(ids))
            return ids

    # -- sleep cycle ---------------------------------------------------------

    def _run(self, op: str, planner: Callable[[View], Any]) -> RunResult:
        run = next(self._runs)
        with task_scope(f"{op}-{run}"):
            snapshot = self.store.take_snapshot()
            self.events.emit("run-start", operation=op, run=run, lane="sleep", snapshot=snapshot.to_dict(),
                             config=self.config.fingerprint())
            view = self.store.view(snapshot)
            plan = planner(view)
            if self.plan_hook is not None:
                self.plan_hook(op)
            if self.abort_check is not None and self.abort_check(op):
                self.events.emit("run-abort", operation=op, run=run)
                raise WindowAborted(op)
            cs: Changeset = plan.changeset
            # the cycle count as of this commit, so a restarted engine resumes it
            cs.meta["cycle"] = self.cycle + (1 if self._closes_window else 0)
            cs.meta["tick"] = self.now
            for name, payload in plan.events:
                self.events.emit(name, operation=op, run=run, **payload)
            body = cs.to_body()
            changes = hashlib.sha256(codec.dumps_encoded(
                {k: v for k, v in body.items() if k != "meta"}).encode()).hexdigest()
            commit_id = self.store.commit(cs, snapshot, tick=self.now, kind=op, body=body)
            self.events.emit("commit", operation=op, run=run, commit=commit_id, snapshot=snapshot.to_dict(),
                             changes=changes, config=self.config.fingerprint())
            # the edge index rows went into the same sqlite transaction as the commit
            self.events.emit("index-write", operation=op, run=run, commit=commit_id,
                             edges=len(cs.edge_writes))
            self.events.emit("run-end", operation=op, run=run)
            return RunResult(op, commit_id, snapshot, plan)

    def contextualize(self) -> RunResult:
        return self._run("contextualize", lambda v: plan_contextualize(v, self.now))

    def consolidate(self) -> RunResult:
        return self._run("consolidate", lambda v: plan_consolidate(
            v, self.now, self.cycle, self.scorer, self.config.consolidation, self.config.gravity))

    def decay(self) -> RunResult:
        return self._run("decay", lambda v: plan_decay(v, self.now, self.config.decay,
                                                        self.config.gravity))

    def audit(self) -> RunResult:
        return self._run("audit", lambda v: plan_audit(v, self.now, self.scorer, self.config.audit,
                                                        self.config.gravity))

    def run_window(self, audit: bool | None = None) -> list[RunResult]:
        """CONTEXTUALIZE, CONSOLIDATE, DECAY, plus AUDIT every k-th window."""
        if audit is None:
            audit = self.config.audit.enabled and (self.cycle + 1) % self.config.audit.every_k == 0
        results = [self.contextualize(), self.consolidate()]
        try:
            self._closes_window = not audit
            results.append(self.decay())
            if audit:
                self._closes_window = True
                results.append(self.audit())
        finally:
            self._closes_window = False
        self.cycle += 1
        return results

    def sleep(self, cycles: int = 1) -> None:
        """Advance one cycle's worth of ticks per window and run the windows."""
        for _ in range(cycles):
            self.advance(self.config.ticks_per_cycle)
            self.run_window()

    # -- inspection ------------------------------------------------------------

    def view(self, snapshot: Snapshot | None = None) -> View:
        return self.store.view(snapshot)

    def gravity(self, snapshot: Snapshot | None = None) -> dict[str, GravityRow]:
        view = self.store.view(snapshot)
        if not view.live_entries():
            return {}
        return gravity_table(view, self.config.gravity, self.now)

    def cold_fetch(self, cold_id: str) -> bytes:
        view = self.store.view()
        obj = view.cold.get(cold_id)
        if obj is None:
            raise KeyError(cold_id)
        return view.read_blob(obj.blob_hash)

    def inspect(self, ident: str) -> dict[str, Any]:
        view = self.store.view()
        for kind, table in (("wiki", view.entries), ("buffer", view.buffer), ("cold", view.cold),
                            ("branch", view.branches)):
            if ident in table:
                record = codec.encode(table[ident])
                out = {"kind": kind, "record": record}
                if kind == "wiki" and record["state"] == "archived":
                    cold = view.cold[record["tombstone_cold_id"]]
                    out["tombstone"] = True
                    out["cold_locator"] = cold.origin_locator
                return out
        raise KeyError(ident)

    def transition_log_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.store.transition_log())
