"""Scripted scenarios that double as executable conformance fixtures.

``minority_promotion`` drives an engine through the legal promotion story:
a load-bearing incumbent, five mutually supporting contradictors arriving
over two windows, promotion, an audit pass, and archival by decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .content import claims_to_bytes
from .engine import Engine, EngineConfig, RunResult
from .model import BranchState, BufferState, ClaimTuple, WikiState

DEPENDENTS = 12


def member_claims(i: int) -> tuple[ClaimTuple, ...]:
    return (ClaimTuple("t", -1, 0.5), ClaimTuple("c", 1, 0.5), ClaimTuple(f"p{i}", 1, 0.3))


@dataclass
class Checkpoint:
    label: str
    results: list[RunResult]
    snapshot: dict[str, Any] = field(default_factory=dict)


@dataclass
class PromotionStory:
    engine: Engine
    incumbent: str
    dependents: list[str]
    members: list[str]
    checkpoints: dict[str, Checkpoint] = field(default_factory=dict)
    archive_window: int | None = None


def _state_summary(engine: Engine, story: PromotionStory) -> dict[str, Any]:
    view = engine.view()
    return {
        "incumbent": view.entries[story.incumbent].state.value,
        "branches": {ref: {"state": b.state.value, "members": sorted(b.member_ids)}
                     for ref, b in sorted(view.branches.items())},
        "buffer": {m: view.buffer[m].state.value for m in story.members if m in view.buffer},
        "live": sorted(e.id for e in view.live_entries()),
        "commits": len(engine.store.commit_ids()),
    }


def minority_promotion(engine: Engine | None = None, max_decay_windows: int = 10) -> PromotionStory:
    eng = engine or Engine(config=EngineConfig())

    # incumbent with a dozen dependents
    eng.ingest(claims_to_bytes([ClaimTuple("t", 1, 1.0)]))
    eng.advance(1)
    eng.run_window(audit=False)
    incumbent = eng.view().live_entries()[0].id
    dependents = []
    for i in range(DEPENDENTS):
        got = eng.ingest(claims_to_bytes([ClaimTuple(f"d{i}", 1, 1.0)]),
                         hints=[(incumbent, "dependency")])
        dependents.append(got.entry.id)
    eng.advance(1)
    eng.run_window(audit=False)
    story = PromotionStory(eng, incumbent, dependents, [])

    # three contradictors before the first window, two arriving while it runs
    for i in range(3):
        story.members.append(eng.ingest(claims_to_bytes(member_claims(i))).entry.id)

    def late_arrivals(op: str) -> None:
        if op == "consolidate":
            for i in (3, 4):
                story.members.append(eng.ingest(claims_to_bytes(member_claims(i))).entry.id)

    eng.plan_hook = late_arrivals
    eng.advance(eng.config.ticks_per_cycle)
    try:
        first = eng.run_window(audit=False)
    finally:
        eng.plan_hook = None
    story.checkpoints["cycle-1"] = Checkpoint("cycle-1", first, _state_summary(eng, story))

    eng.advance(eng.config.ticks_per_cycle)
    second = eng.run_window(audit=False)
    story.checkpoints["cycle-2"] = Checkpoint("cycle-2", second, _state_summary(eng, story))

    # a few reads that still reach the incumbent give the audit something to replay
    for i in range(4):
        eng.read([ClaimTuple(f"d{i}", 1, 1.0), ClaimTuple("t", 1, 1.0)])
    eng.advance(eng.config.ticks_per_cycle)
    third = eng.run_window(audit=True)
    story.checkpoints["audit"] = Checkpoint("audit", third, _state_summary(eng, story))

    for n in range(max_decay_windows):
        eng.advance(eng.config.ticks_per_cycle)
        eng.run_window(audit=False)
        if eng.view().entries[incumbent].state is WikiState.ARCHIVED:
            story.archive_window = n + 1
            break
    story.checkpoints["end"] = Checkpoint("end", [], _state_summary(eng, story))
    return story


def check_promotion_story(story: PromotionStory) -> list[str]:
    """Exact end-state checks; returns the failures (empty when the story holds)."""
    failures: list[str] = []

    def expect(cond: bool, msg: str) -> None:
        if not cond:
            failures.append(msg)

    eng = story.engine
    first, second, audit = (story.checkpoints[k] for k in ("cycle-1", "cycle-2", "audit"))
    early, late = story.members[:3], story.members[3:]

    c1 = first.snapshot
    expect(len(c1["branches"]) == 1, "cycle 1 creates exactly one branch")
    (b1_ref, b1), = c1["branches"].items() if len(c1["branches"]) == 1 else ((None, {}),)
    expect(b1.get("state") == BranchState.OPEN.value, "B1 is open after cycle 1")
    expect(b1.get("members") == sorted(early), "B1 holds entries 1-3")
    expect(all(c1["buffer"][m] == BufferState.PENDING.value for m in late), "entries 4-5 held")
    expect(all(c1["buffer"][m] == BufferState.CONSOLIDATED.value for m in early),
           "entries 1-3 leave the pending set")
    expect(c1["incumbent"] == WikiState.ACTIVE.value, "X still active after cycle 1")
    consolidate_1 = [r for r in first.results if r.op == "consolidate"]
    expect(len(consolidate_1) == 1 and consolidate_1[0].commit_id is not None,
           "cycle 1 consolidate produced one commit")

    c2 = second.snapshot
    expect(c2["incumbent"] == WikiState.DECAYING.value, "X decaying after cycle 2")
    expect(c2["branches"].get(b1_ref, {}).get("state") == BranchState.PROMOTED.value,
           "B1 promoted in cycle 2")
    expect(c2["branches"].get(b1_ref, {}).get("members") == sorted(story.members),
           "B1 grew to five members")
    consolidate_2 = [r for r in second.results if r.op == "consolidate"][0]
    promoted = consolidate_2.plan.promoted
    expect(len(promoted) == 1, "one consolidated entry Y")
    view = eng.view()
    if promoted:
        y = view.entries[promoted[0]]
        expect(y.state in (WikiState.ACTIVE,), "Y enters active")
        expect(set(y.source_ids) == set(story.members), "Y is built from the five members")
    expect(len(c2["branches"]) == 1, "no branch deleted or duplicated")

    audit_run = [r for r in audit.results if r.op == "audit"]
    expect(len(audit_run) == 1, "audit ran in the third window")
    rows = {row["entry"]: row for row in audit_run[0].plan.rows if "entry" in row} if audit_run else {}
    x_row = rows.get(story.incumbent, {})
    expect(x_row.get("verdict") == "unchanged", "X suspension verdict unchanged")
    expect(x_row.get("outcome") == "gravity_reduced", "X gravity reduced")
    expect(audit.snapshot["incumbent"] == WikiState.DECAYING.value, "X not removed by audit")

    expect(view.entries[story.incumbent].state is WikiState.ARCHIVED, "X archived by decay")
    x_records = [r for r in view.audit_log if r.entry_id == story.incumbent]
    expect([r.source for r in x_records] == ["audit", "decay"], "audit then decay records for X")

    # every transition for X is preceded by an audit record for X in the same run
    events = eng.events.events
    for i, ev in enumerate(events):
        if ev.op == "transition" and ev.payload.get("entity") == story.incumbent \
                and ev.payload.get("operation") in ("audit", "decay"):
            run = ev.payload.get("run")
            prior = [p for p in events[:i] if p.op == "audit-record" and p.payload.get("run") == run
                     and p.payload.get("entry") == story.incumbent]
            expect(bool(prior), f"audit record precedes X transition in run {run}")
    return failures
