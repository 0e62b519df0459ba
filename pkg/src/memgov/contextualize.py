"""Depth-fitted extractive compression of external sources with mandatory cold copies."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from typing import Any, Iterable, Sequence

from .content import claims_to_bytes, content_hash, parse_claims
from .model import (
    EXTERNAL_CHANNELS,
    ClaimTuple,
    ColdObject,
    MemgovError,
    TransitionLog,
    transition,
)
from .store import Changeset, UsageRecord, View, cold_id_for

DEFAULT_DEPTH = 2
QUERY_WINDOW = 50
RECOMPRESS_GAP = 2


class MissingColdObject(MemgovError):
    pass


def _round_half_up(x: float) -> int:
    return int(Decimal(repr(x)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def infer_depth(claims: Sequence[ClaimTuple], view: View,
                queries: Iterable[UsageRecord] | None = None) -> int:
    """Depth 1..5 from neighborhood claim density and query interest.

    The neighborhood is every live entry sharing a topic with the source.
    Its mean claim count is ranked against all live entries (fraction at or
    below it) and multiplied by the share of recent queries touching the
    source's topics.
    """
    topics = {c.topic for c in claims}
    live = view.live_entries()
    hood = [e for e in live if e.topics & topics]
    if not hood:
        return DEFAULT_DEPTH
    mean = sum(len(e.claims) for e in hood) / len(hood)
    rank = sum(1 for e in live if len(e.claims) <= mean) / len(live)
    recent = list(view.query_log() if queries is None else queries)[-QUERY_WINDOW:]
    hits = sum(1 for q in recent if {c.topic for c in q.query} & topics)
    density = hits / len(recent) if recent else 0.0
    return min(5, max(1, _round_half_up(1 + 4 * rank * density)))


def compress_to_depth(claims: Sequence[ClaimTuple], depth: int,
                      cold: ColdObject | None) -> tuple[tuple[ClaimTuple, ...], str]:
    """Top ceil(n*d/5) claims by strength, plus the cold-object linkout."""
    if cold is None:
        raise MissingColdObject("archive the original before compressing it")
    if not 1 <= depth <= 5:
        raise ValueError("depth must lie in 1..5")
    keep = math.ceil(len(claims) * depth / 5)
    ordered = sorted(claims, key=lambda c: (-c.strength, c.topic, c.polarity, c.text))
    return tuple(ordered[:keep]), cold.id


def archive_original(view: View, blob_hash: str, locator: str, generation: int = 0,
                     parent: str | None = None) -> tuple[ColdObject, bool]:
    """Cold object for a source blob; returns (object, created)."""
    if not view.has_blob(blob_hash):
        raise MissingColdObject(f"source blob {blob_hash} is not in the store")
    ident = cold_id_for(blob_hash, "source", generation)
    existing = view.cold.get(ident)
    if existing is not None:
        return existing, False
    return ColdObject(ident, blob_hash, locator, linkout_valid=True, generation=generation,
                      parent=parent), True


@dataclass
class ContextPlan:
    changeset: Changeset
    actions: list[dict[str, Any]] = field(default_factory=list)
    events: list[tuple[str, dict[str, Any]]] = field(default_factory=list)


def plan_contextualize(view: View, now: int) -> ContextPlan:
    """Fit pending external sources to depth, then re-fit wiki entries whose context moved."""
    cs = Changeset()
    plan = ContextPlan(cs)
    fitted: dict[str, Any] = dict(view.meta.get("fitted", {}))
    queries = view.query_log()
    log = TransitionLog()

    for buf in view.pending_buffer():
        if buf.origin_channel not in EXTERNAL_CHANNELS or buf.id in fitted or not buf.claims:
            continue
        cold, created = archive_original(view, buf.source_ptr, buf.origin_locator or buf.id)
        if created:
            cs.cold_objects.append(cold)
        plan.events.append(("cold-create", {"cold": cold.id, "source": buf.id}))
        depth = infer_depth(buf.claims, view, queries)
        kept, linkout = compress_to_depth(buf.claims, depth, cold)
        fitted[buf.id] = {"cold": linkout, "depth": depth,
                          "claims": [asdict(c) for c in kept]}
        plan.actions.append({"source": buf.id, "depth": depth, "claims": len(kept), "cold": linkout})
        plan.events.append(("contextualize", {"source": buf.id, "depth": depth, "cold": linkout}))

    for entry in view.live_entries():
        if entry.cold_id is None or entry.depth is None:
            continue
        old = view.cold.get(entry.cold_id)
        if old is None:
            continue
        original = parse_claims(view.read_blob(old.blob_hash))
        depth = infer_depth(original, view, queries)
        if abs(depth - entry.depth) < RECOMPRESS_GAP:
            continue
        new_cold, created = archive_original(view, old.blob_hash, old.origin_locator,
                                             old.generation + 1, parent=old.id)
        if created:
            cs.cold_objects.append(new_cold)
        if old.state.value != "recompressed":
            cs.cold_objects.append(transition(old, "recompress", tick=now, log=log))
        plan.events.append(("cold-create", {"cold": new_cold.id, "source": entry.id}))
        kept, linkout = compress_to_depth(original, depth, new_cold)
        blob = claims_to_bytes(kept)
        cs.blob_writes.append(blob)
        cs.entry_upserts.append(replace(entry, claims=kept, blob_hash=content_hash(blob),
                                        commit_hash="", depth=depth, cold_id=linkout))
        plan.actions.append({"entry": entry.id, "depth": depth, "from_depth": entry.depth,
                             "cold": linkout, "action": "recompress"})
        plan.events.append(("contextualize", {"source": entry.id, "depth": depth, "cold": linkout}))

    if fitted != view.meta.get("fitted", {}):
        cs.meta["fitted"] = fitted
    cs.transitions.extend(log.records)
    return plan


def fitted_claims(view: View, buffer_id: str) -> tuple[tuple[ClaimTuple, ...], str | None, int | None]:
    """Working representation for a buffer entry: depth-fitted if contextualized."""
    info = view.meta.get("fitted", {}).get(buffer_id)
    buf = view.buffer[buffer_id]
    if info is None:
        return buf.claims, None, None
    claims = tuple(ClaimTuple(**c) for c in info["claims"])
    return claims, info["cold"], info["depth"]
