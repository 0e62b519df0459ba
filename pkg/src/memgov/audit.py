"""Slow-cycle stress test of high-gravity entries by virtual suspension.

Every outcome is recorded in the append-only audit log before the state
change it justifies.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .decay import utility
from .gravity import GravityParams, GravityRow, gravity_table
from .model import (
    AuditRecord,
    MinorityBranch,
    Outcome,
    TransitionLog,
    Verdict,
    WikiEntry,
    transition,
)
from .scorer import ClaimScorer, Scorer
from .store import Changeset, UsageRecord, View, archive_changes


@dataclass(frozen=True)
class AuditParams:
    top_n: int = 5
    query_sample: int = 20
    degrade_eps: float = 0.05
    improve_eps: float = 0.05
    branch_stale_cycles: int = 3
    reduction: float = 0.5
    every_k: int = 10
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.top_n < 1 or self.query_sample < 1 or self.branch_stale_cycles < 1:
            raise ValueError("top_n, query_sample and branch_stale_cycles must be positive")
        if self.degrade_eps <= 0 or self.improve_eps <= 0:
            raise ValueError("eps thresholds must be positive")
        if not 0 < self.reduction < 1:
            raise ValueError("reduction must lie in (0, 1)")


@dataclass(frozen=True)
class SuspensionResult:
    verdict: Verdict
    delta: float | None
    queries: int

    @property
    def untested(self) -> bool:
        return self.queries == 0


def select_targets(view: View, p: AuditParams, table: dict[str, GravityRow]) -> list[str]:
    """Priority queue first, then the top_n live entries by base gravity.

    Ties on gravity go to the entry accessed longer ago.
    """
    entries = view.entries
    live = {e.id for e in view.live_entries()}
    out: list[str] = [q for q in view.meta.get("audit_queue", []) if q in live]
    ranked = sorted(live, key=lambda i: (-table[i].g_base, entries[i].last_accessed, i))
    for ident in ranked[:p.top_n]:
        if ident not in out:
            out.append(ident)
    return out


def sample_queries(log: Iterable[UsageRecord], entry_id: str, n: int) -> list[UsageRecord]:
    hits = [u for u in log if entry_id in u.accessed]
    return hits[-n:]


def suspension_test(entry: WikiEntry, queries: list[UsageRecord], corpus: list[WikiEntry],
                    scorer: Scorer, p: AuditParams) -> SuspensionResult:
    """Score the sampled queries with and without ``entry``; the wiki is not touched."""
    if not queries:
        return SuspensionResult(Verdict.UNCHANGED, None, 0)
    without = [e for e in corpus if e.id != entry.id]
    with_scores = [scorer.query_score(q.query, corpus) for q in queries]
    without_scores = [scorer.query_score(q.query, without) for q in queries]
    delta = sum(with_scores) / len(queries) - sum(without_scores) / len(queries)
    if delta > p.degrade_eps:
        verdict = Verdict.DEGRADED
    elif delta < -p.improve_eps:
        verdict = Verdict.IMPROVED
    else:
        verdict = Verdict.UNCHANGED
    return SuspensionResult(verdict, delta, len(queries))


def topical_entropy(queries: Iterable[UsageRecord]) -> float:
    """Shannon entropy (bits) of the topic distribution over a query set."""
    counts = Counter(c.topic for q in queries for c in q.query)
    total = sum(counts.values())
    if not total:
        return 0.0
    return -sum(n / total * math.log2(n / total) for n in counts.values())


def branch_is_stale(branch: MinorityBranch, cycles: int) -> bool:
    h = branch.size_history
    return len(h) >= cycles and len(set(h[-cycles:])) == 1


def evaluate_branches(branches: Iterable[MinorityBranch], verdicts: dict[str, Verdict],
                      p: AuditParams) -> dict[str, str]:
    """keep or close per open branch; close needs a load-bearing incumbent and a stale branch."""
    out = {}
    for b in sorted(branches, key=lambda b: b.branch_ref):
        load_bearing = verdicts.get(b.incumbent_id) is Verdict.DEGRADED
        out[b.branch_ref] = "close" if load_bearing and branch_is_stale(b, p.branch_stale_cycles) else "keep"
    return out


@dataclass
class AuditPlan:
    changeset: Changeset
    rows: list[dict[str, Any]] = field(default_factory=list)
    events: list[tuple[str, dict[str, Any]]] = field(default_factory=list)
    entropy: float = 0.0


def plan_audit(view: View, now: int, scorer: Scorer | None = None, p: AuditParams = AuditParams(),
               gparams: GravityParams = GravityParams()) -> AuditPlan:
    scorer = scorer or ClaimScorer()
    cs = Changeset()
    plan = AuditPlan(cs)
    log = TransitionLog()
    live = view.live_entries()
    if not live:
        return plan
    table = gravity_table(view, gparams, now)
    targets = select_targets(view, p, table)
    queries_log = view.query_log()
    sampled_all: list[UsageRecord] = []
    history: dict[str, list[Verdict]] = {}
    latest: dict[str, Verdict] = {}
    for record in view.audit_log:
        if record.source == "audit":
            history.setdefault(record.entry_id, []).append(record.suspension_result)
            latest[record.entry_id] = record.suspension_result
    queue = [q for q in view.meta.get("audit_queue", []) if q not in targets]

    for ident in targets:
        entry = view.entries[ident]
        queries = sample_queries(queries_log, ident, p.query_sample)
        sampled_all.extend(queries)
        result = suspension_test(entry, queries, live, scorer, p)
        row = table[ident]
        if result.untested:
            outcome = Outcome.RESTORED
        elif result.verdict is Verdict.DEGRADED:
            outcome = Outcome.RESTORED
        elif result.verdict is Verdict.UNCHANGED:
            outcome = Outcome.GRAVITY_REDUCED
        else:
            outcome = Outcome.ARCHIVED
        record = AuditRecord(ident, now, result.verdict, outcome, delta=result.delta,
                             untested=result.untested)
        cs.audit_records.append(record)
        plan.events.append(("audit-record", {"entry": ident, "verdict": result.verdict.value,
                                             "outcome": outcome.value, "source": "audit"}))
        if outcome is Outcome.RESTORED:
            if not result.untested:
                cs.entry_upserts.append(replace(entry, gravity_protected=row.protected,
                                                gravity_base=row.g_base, gravity_eff=row.g_eff))
        elif outcome is Outcome.GRAVITY_REDUCED:
            scale = entry.gravity_scale * p.reduction
            cs.entry_upserts.append(replace(entry, gravity_scale=scale,
                                            gravity_base=row.g_base * p.reduction,
                                            gravity_eff=row.g_eff * p.reduction))
            plan.events.append(("gravity-reduce", {"entry": ident, "scale": scale}))
        else:
            archived, cold, rec = archive_changes(entry, now)
            log.append(rec)
            cs.entry_upserts.append(archived)
            cs.cold_objects.append(cold)
            cs.tombstones.append(ident)
            plan.events.append(("archive", {"entry": ident, "cold": cold.id, "source": "audit",
                                            "g_base": row.g_base}))
            plan.events.append(("transition", {"entity": ident, "event": "archive",
                                               "from": entry.state.value, "to": "archived"}))
        latest[ident] = result.verdict
        past = history.get(ident, []) + [result.verdict]
        recent = past[-2:]
        if (outcome is not Outcome.ARCHIVED and len(recent) == 2
                and all(v is not Verdict.DEGRADED for v in recent) and utility(entry) < 0
                and ident not in queue):
            queue.append(ident)
        plan.rows.append({"entry": ident, "delta": result.delta, "verdict": result.verdict.value,
                          "outcome": outcome.value, "untested": result.untested})

    decisions = evaluate_branches(view.open_branches(), latest, p)
    for ref, decision in decisions.items():
        if decision != "close":
            continue
        branch = view.branches[ref]
        reason = f"audit: incumbent {branch.incumbent_id} load-bearing, branch stale"
        cs.branch_closures[ref] = reason
        cs.branch_ops.append(transition(branch, "close", tick=now, log=log, reason=reason))
        plan.events.append(("branch-close", {"branch": ref, "reason": reason, "record": True}))
        plan.events.append(("transition", {"entity": ref, "event": "close", "from": "open",
                                           "to": "closed"}))
        plan.rows.append({"branch": ref, "decision": "close", "reason": reason})

    plan.entropy = topical_entropy(sampled_all)
    if queue != list(view.meta.get("audit_queue", [])):
        cs.meta["audit_queue"] = queue
    cs.transitions.extend(log.records)
    return plan
