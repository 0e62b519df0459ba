"""Batched deep integration of the buffer into the wiki.

A run scores the buffer against itself, then against the wiki, classifies
each entry by cohesion, looks for minority clusters and either grows their
branches or promotes them. Planning is pure; the engine commits the plan as
one changeset.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

from .content import claims_to_bytes, content_hash
from .contextualize import fitted_claims
from .decay import utility
from .fuzzy import Trapezoids, classify
from .gravity import GravityParams, gravity_table
from .model import (
    Bucket,
    BufferEntry,
    BufferState,
    ClaimTuple,
    Edge,
    EdgeKind,
    MinorityBranch,
    OriginChannel,
    TransitionLog,
    WikiEntry,
    WikiState,
    transition,
)
from .scorer import ClaimScorer, Scorer
from .store import Changeset, View


@dataclass(frozen=True)
class ConsolidationParams:
    trapezoids: Trapezoids = Trapezoids()
    support_edge_min: float = 0.6
    contradiction_edge_min: float = 0.5
    epistemic_friction: float = 1.5
    min_cluster_size: int = 2
    diversity_bonus: float = 0.5
    # cohesion = w_consistency*consistency + w_task*task - w_cost*cost
    w_consistency: float = 1.0
    w_task: float = 0.25
    w_cost: float = 1.0
    novel_consistency: float = 0.8
    link_min: float = 0.3
    link_top: int = 2
    buffer_ttl_cycles: int = 3
    divergence_cycles: int = 2
    safety_friction: float = 3.0
    # per-channel multiplier on contradiction weight; empty means no trusted class
    trust: tuple[tuple[str, float], ...] = ()
    promotion_enabled: bool = True
    model_version: str = "stub-1"

    def __post_init__(self) -> None:
        if self.epistemic_friction < 1:
            raise ValueError("epistemic_friction must be at least 1")
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be positive")
        if self.diversity_bonus < 0:
            raise ValueError("diversity_bonus must be non-negative")

    def trust_of(self, channel: OriginChannel) -> float:
        return dict(self.trust).get(channel.value, 1.0)


@dataclass(frozen=True)
class Participant:
    id: str
    claims: tuple[ClaimTuple, ...]
    channel: OriginChannel
    pending: bool
    safety: bool
    branch: str | None
    buffer: BufferEntry


@dataclass
class WikiScore:
    cohesion: float
    bucket: Bucket
    degrees: dict[Bucket, float]
    best_similarity: float
    contradicted: list[tuple[str, float]]  # (wiki id, contradiction) at or above the edge minimum
    reinforced: list[str]


@dataclass
class ConsolidationPlan:
    changeset: Changeset
    report: list[dict[str, Any]] = field(default_factory=list)
    events: list[tuple[str, dict[str, Any]]] = field(default_factory=list)
    promoted: list[str] = field(default_factory=list)

    def report_jsonl(self) -> str:
        import json

        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.report)


def _clamp(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def participants(view: View) -> list[Participant]:
    """Pending buffer entries plus members of every open branch, sorted by id."""
    out: dict[str, Participant] = {}
    for buf in view.pending_buffer():
        claims, _, _ = fitted_claims(view, buf.id)
        if claims:
            out[buf.id] = Participant(buf.id, claims, buf.origin_channel, True, buf.safety_flag,
                                      None, buf)
    for branch in view.open_branches():
        for member in sorted(branch.member_ids):
            buf = view.buffer.get(member)
            if buf is None:
                continue
            claims, _, _ = fitted_claims(view, member)
            out[member] = Participant(member, claims, buf.origin_channel,
                                      buf.state is BufferState.PENDING, buf.safety_flag,
                                      branch.branch_ref, buf)
    return [out[k] for k in sorted(out)]


def score_buffer_internal(parts: list[Participant], scorer: Scorer,
                          params: ConsolidationParams) -> list[Edge]:
    edges: list[Edge] = []
    by_topic: dict[str, list[int]] = {}
    for n, p in enumerate(parts):
        for t in {c.topic for c in p.claims}:
            by_topic.setdefault(t, []).append(n)
    for i, a in enumerate(parts):
        # pairs without a shared topic score zero on both measures
        partners = sorted({j for c in a.claims for j in by_topic[c.topic] if j > i})
        for b in (parts[j] for j in partners):
            sim = scorer.similarity(a.claims, b.claims)
            con = scorer.contradiction(a.claims, b.claims)
            if sim >= params.support_edge_min:
                edges.append(Edge(a.id, b.id, EdgeKind.SUPPORT, sim))
            if con >= params.contradiction_edge_min:
                edges.append(Edge(a.id, b.id, EdgeKind.CONTRADICTION, con))
    return edges


class TopicIndex:
    """Wiki entries by topic; only entries sharing a topic are scored against each other."""

    def __init__(self, wiki: list[WikiEntry]) -> None:
        self.order = {e.id: n for n, e in enumerate(wiki)}
        self.by_topic: dict[str, list[WikiEntry]] = {}
        for e in wiki:
            for t in e.topics:
                self.by_topic.setdefault(t, []).append(e)

    def candidates(self, claims: Iterable[ClaimTuple]) -> list[WikiEntry]:
        found = {e.id: e for c in claims for e in self.by_topic.get(c.topic, ())}
        return sorted(found.values(), key=lambda e: self.order[e.id])


def score_against_wiki(claims: tuple[ClaimTuple, ...], wiki: list[WikiEntry],
                       g_eff: dict[str, float], scorer: Scorer, params: ConsolidationParams,
                       safety: bool = False, friction: float = 1.0) -> WikiScore:
    best = 0.0
    cost = 0.0
    any_conflict = False
    contradicted: list[tuple[str, float]] = []
    reinforced: list[str] = []
    for entry in wiki:
        sim = scorer.similarity(claims, entry.claims)
        if safety:
            sim /= params.safety_friction
        con = scorer.contradiction(claims, entry.claims)
        best = max(best, sim)
        if sim >= params.link_min:
            reinforced.append(entry.id)
        if con > 0:
            any_conflict = True
            cost += con * g_eff.get(entry.id, 0.0)
            if con >= params.contradiction_edge_min:
                contradicted.append((entry.id, con))
    consistency = best if any_conflict else max(best, params.novel_consistency)
    task = scorer.task_alignment(claims) if hasattr(scorer, "task_alignment") else 0.0
    cohesion = _clamp(params.w_consistency * consistency + params.w_task * task
                      - friction * params.w_cost * cost)
    bucket, degrees = classify(cohesion, params.trapezoids)
    return WikiScore(cohesion, bucket, degrees, best, contradicted, reinforced)


def _components(nodes: list[str], edges: Iterable[tuple[str, str]]) -> list[list[str]]:
    parent = {n: n for n in nodes}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        if a in parent and b in parent:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, list[str]] = {}
    for n in nodes:
        groups.setdefault(find(n), []).append(n)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def detect_minority_clusters(support: dict[frozenset, float], primary: dict[str, str],
                             min_size: int) -> list[tuple[list[str], str]]:
    """Support-connected groups of entries that all contradict the same incumbent.

    Groups smaller than ``min_size`` are not clusters; a lone contradictor is noise.
    """
    found = []
    for inc in sorted(set(primary.values())):
        group = [pid for pid in sorted(primary) if primary[pid] == inc]
        pairs = [tuple(sorted(pair)) for pair in support if pair <= set(group)]
        for comp in _components(group, pairs):
            if len(comp) >= min_size:
                found.append((comp, inc))
    return found


def pressure(members: list[Participant], incumbent: WikiEntry, support: dict[frozenset, float],
             scorer: Scorer, params: ConsolidationParams) -> float:
    """Support-weighted contradiction mass of a cluster against its incumbent."""
    ids = {m.id for m in members}
    total = 0.0
    for m in members:
        weights = [w for pair, w in support.items() if m.id in pair and pair <= ids]
        con = scorer.contradiction(m.claims, incumbent.claims) * params.trust_of(m.channel)
        if weights:
            mean = sum(weights) / len(weights)
        else:
            # a lone member only counts when its channel is trusted
            mean = 1.0 if params.trust_of(m.channel) > 1.0 else 0.0
        total += mean * con
    channels = len({m.channel for m in members})
    return total * (1 + params.diversity_bonus * channels / 3)


def branch_ref_for(incumbent: str, members: Iterable[str], cycle: int) -> str:
    digest = hashlib.sha256(f"{incumbent}:{','.join(sorted(members))}:{cycle}".encode()).hexdigest()
    return f"branch/{digest[:16]}"


def merge_claims(members: list[Participant]) -> tuple[ClaimTuple, ...]:
    best: dict[tuple[str, int], ClaimTuple] = {}
    for m in members:
        for c in m.claims:
            key = (c.topic, c.polarity)
            if key not in best or c.strength > best[key].strength:
                best[key] = c
    return tuple(best[k] for k in sorted(best))


def plan_consolidate(view: View, now: int, cycle: int, scorer: Scorer | None = None,
                     params: ConsolidationParams = ConsolidationParams(),
                     gparams: GravityParams = GravityParams()) -> ConsolidationPlan:
    scorer = scorer or ClaimScorer()
    cs = Changeset()
    plan = ConsolidationPlan(cs)
    ev = plan.events
    log = TransitionLog()
    wiki = view.live_entries()
    table = gravity_table(view, gparams, now) if wiki else {}
    g_eff = {k: r.g_eff for k, r in table.items()}
    wiki_by_id = {e.id: e for e in wiki}
    queue = list(view.meta.get("audit_queue", []))
    entries_out: dict[str, WikiEntry] = {}

    def put_entry(entry: WikiEntry) -> None:
        entries_out[entry.id] = entry

    # phase 1: buffer against itself
    parts = participants(view)
    by_id = {p.id: p for p in parts}
    ev.append(("phase1-start", {"participants": len(parts)}))
    internal = score_buffer_internal(parts, scorer, params)
    support = {frozenset((e.src, e.dst)): e.weight for e in internal if e.kind is EdgeKind.SUPPORT}
    ev.append(("phase1-end", {"support": len(support),
                              "contradiction": len(internal) - len(support)}))

    # phase 2: against the wiki
    ev.append(("phase2-start", {"wiki": len(wiki)}))
    index = TopicIndex(wiki)
    scores = {p.id: score_against_wiki(p.claims, index.candidates(p.claims), g_eff, scorer,
                                       params, p.safety)
              for p in parts}
    ev.append(("phase2-end", {}))

    # phase 3: classification
    ev.append(("phase3-start", {}))
    primary: dict[str, str] = {}
    for p in parts:
        s = scores[p.id]
        if s.contradicted:
            primary[p.id] = max(s.contradicted,
                                key=lambda item: (item[1] * g_eff.get(item[0], 0.0), item[0]))[0]
        elif p.branch is not None:
            branch = view.branches[p.branch]
            if branch.incumbent_id in wiki_by_id:
                primary[p.id] = branch.incumbent_id

    # phase 4: minority clusters
    ev.append(("phase4-start", {}))
    branch_members: dict[str, set[str]] = {b.branch_ref: set(b.member_ids) for b in view.open_branches()}
    touched: dict[str, MinorityBranch] = {}
    incumbents = sorted(set(primary.values()))
    consolidated: set[str] = set()
    for inc in incumbents:
        group = [pid for pid in sorted(primary) if primary[pid] == inc]
        pairs = [tuple(sorted(pair)) for pair in support if pair <= set(group)]
        for comp in _components(group, pairs):
            existing = sorted({by_id[m].branch for m in comp if by_id[m].branch is not None
                               and view.branches[by_id[m].branch].incumbent_id == inc})
            if not existing and not any(by_id[m].pending for m in comp):
                continue
            if existing:
                ref = max(existing, key=lambda r: (len(branch_members[r] & set(comp)), r))
                base = touched.get(ref, view.branches[ref])
                members = set(base.member_ids) | {m for m in comp if by_id[m].branch in (None, ref)}
            else:
                ref = branch_ref_for(inc, comp, cycle)
                base = None
                members = set(comp)
            member_parts = [by_id[m] for m in sorted(members) if m in by_id]
            p_val = pressure(member_parts, wiki_by_id[inc], support, scorer, params)
            threshold = params.epistemic_friction * g_eff.get(inc, 0.0)
            con_edges = sum(1 for m in member_parts
                            if any(w == inc for w, _ in scores[m.id].contradicted))
            ev.append(("pressure", {"branch": ref, "incumbent": inc, "members": len(members),
                                    "pressure": p_val, "threshold": threshold}))
            for m in member_parts:
                if (m.id, inc) not in {(e.src, e.dst) for e in cs.edge_writes}:
                    con = next((c for w, c in scores[m.id].contradicted if w == inc), None)
                    if con is not None:
                        cs.edge_writes.append(Edge(m.id, inc, EdgeKind.CONTRADICTION, con))
            if base is None:
                base = MinorityBranch(ref, inc, frozenset(members), created_cycle=cycle)
                ev.append(("branch-create", {"branch": ref, "incumbent": inc,
                                             "members": sorted(members)}))
            size_history = base.size_history + (len(members),)
            grown = replace(base, member_ids=frozenset(members), contradiction_edge_count=con_edges,
                            cycles_open=base.cycles_open + 1, size_history=size_history)
            for m in member_parts:
                if m.pending and m.id not in consolidated:
                    consolidated.add(m.id)
            promote = (params.promotion_enabled and len(members) >= params.min_cluster_size
                       and p_val >= threshold) or (
                params.promotion_enabled and len(members) == 1 and p_val >= threshold > 0)
            if promote:
                touched[ref] = _promote(plan, view, grown, member_parts, wiki_by_id[inc], now, log,
                                        put_entry, queue, entries_out)
            else:
                touched[ref] = grown
            for m in member_parts:
                row = {"entry": m.id, "cohesion": scores[m.id].cohesion,
                       "bucket": scores[m.id].bucket.value,
                       "action": "promote" if promote else
                       ("branch" if len(members) >= params.min_cluster_size else "quarantine"),
                       "branch": ref}
                plan.report.append(row)
            branch_members[ref] = set(members)

    # open branches with no participant left still age
    for branch in view.open_branches():
        if branch.branch_ref not in touched:
            touched[branch.branch_ref] = replace(
                branch, cycles_open=branch.cycles_open + 1,
                size_history=branch.size_history + (len(branch.member_ids),))
    cs.branch_ops = [touched[k] for k in sorted(touched)]
    cs.edge_writes.extend(internal)

    # routing of pending entries outside the minority path
    integrated: list[WikiEntry] = []
    for p in parts:
        if not p.pending or p.id in consolidated:
            continue
        s = scores[p.id]
        if s.bucket is Bucket.LOW:
            age = cycle - p.buffer.ingested_cycle
            if age + 1 >= params.buffer_ttl_cycles:
                cs.buffer_updates.append(transition(p.buffer, "expire", tick=now, log=log))
                action = "expire"
            else:
                action = "hold"
            plan.report.append({"entry": p.id, "cohesion": s.cohesion, "bucket": s.bucket.value,
                                "action": action})
            continue
        claims, cold_id, depth = fitted_claims(view, p.id)
        blob = claims_to_bytes(claims)
        cs.blob_writes.append(blob)
        entry = WikiEntry(
            id=p.id, commit_hash="", blob_hash=content_hash(blob), claims=claims,
            created_at=now, last_accessed=now, cohesion_bucket=s.bucket,
            flagged=s.bucket is Bucket.MID, origin_channel=p.channel, source_ids=(p.id,),
            depth=depth, cold_id=cold_id,
        )
        put_entry(entry)
        integrated.append(entry)
        consolidated.add(p.id)
        if p.safety:
            for target in s.reinforced:
                if target not in queue:
                    queue.append(target)
        plan.report.append({"entry": p.id, "cohesion": s.cohesion, "bucket": s.bucket.value,
                            "action": "integrate-flagged" if entry.flagged else "integrate"})

    # dependency edges for the newly integrated entries
    targets = dict(wiki_by_id)
    targets.update({e.id: e for e in integrated})
    for entry in integrated:
        buf = by_id[entry.id].buffer
        links: dict[str, float] = {}
        for target, kind in buf.candidate_edges:
            if kind == EdgeKind.DEPENDENCY.value and target in targets and target != entry.id:
                links[target] = 1.0
        ranked = sorted(((scorer.similarity(entry.claims, w.claims), w.id) for w in index.candidates(entry.claims)),
                        key=lambda item: (-item[0], item[1]))
        for sim, wid in ranked[:params.link_top]:
            if sim >= params.link_min and wid not in links:
                links[wid] = sim
        for target in sorted(links):
            cs.edge_writes.append(Edge(entry.id, target, EdgeKind.DEPENDENCY, min(1.0, links[target])))

    for ident in sorted(consolidated):
        cs.buffer_updates.append(transition(by_id[ident].buffer, "consolidate", tick=now, log=log))

    _review_divergence(plan, view, wiki, g_eff, scorer, params, put_entry, entries_out)
    _review_model_version(plan, view, table, params, put_entry, entries_out)

    cs.entry_upserts.extend(entries_out[k] for k in sorted(entries_out))
    if queue != list(view.meta.get("audit_queue", [])):
        cs.meta["audit_queue"] = queue
    cs.transitions.extend(log.records)
    for rec in log.records:
        ev.append(("transition", {"entity": rec.entity, "event": rec.event,
                                  "from": rec.from_state, "to": rec.to_state}))
    plan.report.sort(key=lambda row: (row["entry"], row["action"]))
    return plan


def _promote(plan: ConsolidationPlan, view: View, branch: MinorityBranch,
             members: list[Participant], incumbent: WikiEntry, now: int, log: TransitionLog,
             put_entry, queue: list[str], entries_out: dict[str, WikiEntry]) -> MinorityBranch:
    cs = plan.changeset
    claims = merge_claims(members)
    blob = claims_to_bytes(claims)
    blob_hash = content_hash(blob)
    y_id = hashlib.sha256(f"merge:{branch.branch_ref}:{blob_hash}".encode()).hexdigest()
    cs.blob_writes.append(blob)
    channel = sorted((m.channel for m in members), key=lambda c: c.value)[0]
    y = WikiEntry(id=y_id, commit_hash="", blob_hash=blob_hash, claims=claims, created_at=now,
                  last_accessed=now, cohesion_bucket=Bucket.HIGH, origin_channel=channel,
                  source_ids=tuple(sorted(m.id for m in members)))
    put_entry(y)
    current = entries_out.get(incumbent.id, incumbent)
    if current.state is WikiState.ACTIVE:
        put_entry(transition(current, "decay", tick=now, log=log))
    for key in sorted(view.edges):
        edge = view.edges[key]
        if edge.kind is EdgeKind.DEPENDENCY and edge.live and edge.dst == incumbent.id:
            cs.edge_writes.append(replace(edge, live=False))
            if edge.src != y_id:
                cs.edge_writes.append(Edge(edge.src, y_id, EdgeKind.DEPENDENCY, edge.weight))
    promoted = transition(branch, "promote", tick=now, log=log)
    cs.branch_closures[branch.branch_ref] = "promoted"
    if incumbent.id not in queue:
        queue.append(incumbent.id)
    plan.promoted.append(y_id)
    plan.report.append({"entry": y_id, "cohesion": 1.0, "bucket": Bucket.HIGH.value,
                        "action": "merge", "branch": branch.branch_ref})
    plan.events.append(("promote", {"branch": branch.branch_ref, "incumbent": incumbent.id,
                                    "merged": y_id}))
    return promoted


def _review_divergence(plan: ConsolidationPlan, view: View, wiki: list[WikiEntry],
                       g_eff: dict[str, float], scorer: Scorer, params: ConsolidationParams,
                       put_entry, entries_out: dict[str, WikiEntry]) -> None:
    """Resolve flagged (mid-bucket) entries by their utility record."""
    for entry in wiki:
        if not entry.flagged or entry.quarantined:
            continue
        current = entries_out.get(entry.id, entry)
        if not entry.utility_trace:
            continue
        u = utility(entry)
        if u >= 0:
            put_entry(replace(current, flagged=False, negative_cycles=0))
            plan.report.append({"entry": entry.id, "cohesion": None, "bucket": "mid",
                                "action": "integrate-vocabulary"})
            continue
        negative = current.negative_cycles + 1
        if negative < params.divergence_cycles:
            put_entry(replace(current, negative_cycles=negative))
            continue
        others = [w for w in wiki if w.id != entry.id]
        rescored = score_against_wiki(entry.claims, others, g_eff, scorer, params,
                                      friction=params.epistemic_friction)
        if rescored.bucket is Bucket.LOW:
            put_entry(replace(current, quarantined=True, negative_cycles=negative))
            action = "keep-ontology"
        else:
            put_entry(replace(current, flagged=False, negative_cycles=0))
            action = "integrate-vocabulary"
        plan.report.append({"entry": entry.id, "cohesion": rescored.cohesion,
                            "bucket": rescored.bucket.value, "action": action})


def _review_model_version(plan: ConsolidationPlan, view: View, table, params: ConsolidationParams,
                          put_entry, entries_out: dict[str, WikiEntry]) -> None:
    stored = view.meta.get("model_version")
    if stored == params.model_version:
        return
    plan.changeset.meta["model_version"] = params.model_version
    if stored is None:
        return
    for ident in sorted(table):
        if table[ident].protected:
            current = entries_out.get(ident, view.entries[ident])
            put_entry(replace(current, review_flagged=True))
            plan.report.append({"entry": ident, "cohesion": None, "bucket": None,
                                "action": "review-flagged"})
