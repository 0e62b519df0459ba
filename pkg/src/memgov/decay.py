"""Vitality scoring and floor-respecting compression. Nothing is ever deleted."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

from .content import claims_to_bytes, content_hash
from .gravity import GravityParams, GravityRow, gravity_table
from .model import (
    AuditRecord,
    ClaimTuple,
    MemgovError,
    Outcome,
    TransitionLog,
    Verdict,
    WikiEntry,
    WikiState,
    transition,
)
from .store import Changeset, View, archive_changes

TERMS = ("recency", "frequency", "utility", "gravity", "wear")


class AlreadyMinimal(MemgovError):
    pass


@dataclass(frozen=True)
class VitalityWeights:
    recency_weight: float = 1.0
    frequency_weight: float = 0.02
    utility_weight: float = 0.5
    gravity_weight: float = 0.5
    wear_penalty: float = 1.0
    vitality_threshold: float = 0.5

    def __post_init__(self) -> None:
        for name in ("recency_weight", "frequency_weight", "utility_weight", "gravity_weight",
                     "wear_penalty"):
            value = getattr(self, name)
            if value is None:
                raise ValueError(f"{name} is required; set it to 0 to silence the term")
            if value < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class DecayConfig:
    weights: VitalityWeights = VitalityWeights()
    ticks_per_day: int = 100
    ewma_alpha: float = 0.3
    distortion_step: float = 0.1
    # live-entry cap; above it the lowest-vitality unprotected entries are archived
    capacity: int | None = None
    floor_enabled: bool = True


def utility(entry: WikiEntry, alpha: float = 0.3) -> float:
    """Exponentially weighted mean of the utility trace, 0 when empty."""
    u = None
    for _, outcome in entry.utility_trace:
        u = outcome if u is None else alpha * outcome + (1 - alpha) * u
    return 0.0 if u is None else u


def vitality_terms(entry: WikiEntry, now: int, w: VitalityWeights, g_eff: float,
                   ticks_per_day: int = 100, alpha: float = 0.3) -> dict[str, float]:
    days = max(1.0, (now - entry.last_accessed) / ticks_per_day)
    return {
        "recency": w.recency_weight * (1.0 / days),
        "frequency": w.frequency_weight * entry.access_count,
        "utility": w.utility_weight * utility(entry, alpha),
        "gravity": w.gravity_weight * g_eff,
        "wear": -w.wear_penalty * entry.summarization_distortion,
    }


def vitality(entry: WikiEntry, now: int, w: VitalityWeights, g_eff: float,
             ticks_per_day: int = 100, alpha: float = 0.3) -> float:
    terms = vitality_terms(entry, now, w, g_eff, ticks_per_day, alpha)
    if tuple(terms) != TERMS:
        raise AssertionError("vitality needs all five terms")
    return sum(terms[t] for t in TERMS)


def _strength_order(claims: tuple[ClaimTuple, ...]) -> list[ClaimTuple]:
    return sorted(claims, key=lambda c: (-c.strength, c.topic, c.polarity, c.text))


def compress_entry(entry: WikiEntry, step: float = 0.1) -> tuple[WikiEntry, bytes]:
    """Keep the strongest half of the claims (at least one); returns the new version and blob."""
    n = len(entry.claims)
    if n <= 1:
        raise AlreadyMinimal(entry.id)
    keep = max(1, n // 2)
    kept = tuple(_strength_order(entry.claims)[:keep])
    blob = claims_to_bytes(kept)
    new = replace(entry, claims=kept, blob_hash=content_hash(blob), commit_hash="",
                  summarization_distortion=entry.summarization_distortion + step)
    return new, blob


@dataclass
class DecayPlan:
    changeset: Changeset
    actions: list[dict[str, Any]] = field(default_factory=list)
    events: list[tuple[str, dict[str, Any]]] = field(default_factory=list)


def _latest_audit(view: View) -> dict[str, AuditRecord]:
    latest: dict[str, AuditRecord] = {}
    for record in view.audit_log:
        if record.source == "audit":
            latest[record.entry_id] = record
    return latest


def plan_decay(view: View, now: int, config: DecayConfig = DecayConfig(),
               gparams: GravityParams = GravityParams()) -> DecayPlan:
    """Score every live entry and compress or archive the eligible ones.

    Entries whose base gravity is at or above the protection floor are left
    untouched whatever their vitality.
    """
    w = config.weights
    cs = Changeset()
    plan = DecayPlan(cs)
    table: dict[str, GravityRow] = gravity_table(view, gparams, now) if view.live_entries() else {}
    floor = min((r.g_base for r in table.values() if r.protected), default=0.0)
    log = TransitionLog()
    plan.events.append(("decay-pass", {"terms": list(TERMS), "floor": floor}))
    latest = _latest_audit(view)
    queue = list(view.meta.get("audit_queue", []))

    scored = []
    for entry in view.live_entries():
        row = table[entry.id]
        protected = row.protected and config.floor_enabled
        v = vitality(entry, now, w, row.g_eff, config.ticks_per_day, config.ewma_alpha)
        scored.append((entry, row, protected, v))
    victims: set[str] = set()
    if config.capacity is not None and len(scored) > config.capacity:
        open_ = sorted((item for item in scored if not item[2]), key=lambda it: (it[3], it[0].id))
        victims = {item[0].id for item in open_[:len(scored) - config.capacity]}

    for entry, row, protected, v in scored:
        updated = replace(entry, vitality=v, gravity_base=row.g_base, gravity_eff=row.g_eff,
                          gravity_protected=protected)
        base = {"entry": entry.id, "vitality": v, "g_base": row.g_base, "floor": floor,
                "protected": protected}
        if entry.id in victims:
            _archive(plan, updated, now, log, note="storage-pressure", extra=base)
            continue
        if v >= w.vitality_threshold or protected:
            if updated != entry:
                cs.entry_upserts.append(updated)
            continue
        if entry.state is WikiState.DECAYING:
            record = latest.get(entry.id)
            if record is not None and record.suspension_result is not Verdict.DEGRADED:
                _archive(plan, updated, now, log, note="below-threshold", extra=base)
                continue
            if entry.id not in queue:
                queue.append(entry.id)
            if updated != entry:
                cs.entry_upserts.append(updated)
            plan.actions.append({**base, "action": "hold-for-audit"})
            continue
        try:
            compressed, blob = compress_entry(updated, config.distortion_step)
        except AlreadyMinimal:
            cs.entry_upserts.append(transition(updated, "decay", tick=now, log=log))
            plan.actions.append({**base, "action": "decaying"})
            plan.events.append(("transition", {"entity": entry.id, "event": "decay",
                                               "from": "active", "to": "decaying"}))
            continue
        cs.blob_writes.append(blob)
        cs.entry_upserts.append(compressed)
        plan.actions.append({**base, "action": "compress", "claims": len(compressed.claims),
                             "blob": compressed.blob_hash})
        plan.events.append(("compress", {"entry": entry.id, "g_base": row.g_base, "floor": floor,
                                         "protected": protected}))

    archived = set(cs.tombstones)
    queue = [q for q in queue if q not in archived]
    if queue != list(view.meta.get("audit_queue", [])):
        cs.meta["audit_queue"] = queue
    cs.transitions.extend(log.records)
    return plan


def _archive(plan: DecayPlan, entry: WikiEntry, now: int, log: TransitionLog, *, note: str,
             extra: dict[str, Any]) -> None:
    cs = plan.changeset
    record = AuditRecord(entry.id, now, Verdict.UNCHANGED, Outcome.ARCHIVED, untested=True,
                         source="decay", note=note)
    archived, cold, rec = archive_changes(entry, now)
    log.append(rec)
    cs.audit_records.append(record)
    cs.entry_upserts.append(archived)
    cs.cold_objects.append(cold)
    cs.tombstones.append(entry.id)
    plan.actions.append({**extra, "action": "archive", "note": note})
    plan.events.append(("audit-record", {"entry": entry.id, "outcome": "archived", "source": "decay"}))
    plan.events.append(("archive", {"entry": entry.id, "g_base": extra["g_base"],
                                    "floor": extra["floor"], "protected": extra["protected"],
                                    "cold": cold.id}))
    plan.events.append(("transition", {"entity": entry.id, "event": "archive",
                                       "from": entry.state.value, "to": "archived"}))
