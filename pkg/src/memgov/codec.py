"""JSON round-tripping for entity records (index rows, commits, reports)."""

from __future__ import annotations

import enum
import json
from dataclasses import fields, is_dataclass
from typing import Any

from .model import (
    AuditRecord,
    BranchState,
    Bucket,
    BufferEntry,
    BufferState,
    ClaimTuple,
    ColdObject,
    ColdState,
    Edge,
    EdgeKind,
    MinorityBranch,
    OriginChannel,
    Outcome,
    TransitionRecord,
    Verdict,
    WikiEntry,
    WikiState,
)


_SCALARS = (str, int, float, bool, type(None))
_field_names: dict[type, tuple[str, ...]] = {}


def encode(obj: Any) -> Any:
    kind = type(obj)
    if kind in _SCALARS:
        return obj
    names = _field_names.get(kind)
    if names is None and is_dataclass(obj) and not isinstance(obj, type):
        names = _field_names[kind] = tuple(f.name for f in fields(obj))
    if names is not None:
        return {name: encode(getattr(obj, name)) for name in names}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (frozenset, set)):
        return sorted(encode(x) for x in obj)
    if isinstance(obj, (list, tuple)):
        return [encode(x) for x in obj]
    if isinstance(obj, dict):
        return {str(k): encode(v) for k, v in obj.items()}
    return obj


def dumps(obj: Any) -> str:
    """Stable JSON: sorted keys, no whitespace, shortest float repr."""
    return dumps_encoded(encode(obj))


def dumps_encoded(data: Any) -> str:
    """``dumps`` for data that is already plain JSON types."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def claims_from(data: list[dict]) -> tuple[ClaimTuple, ...]:
    return tuple(ClaimTuple(d["topic"], d["polarity"], d["strength"], d.get("text", "")) for d in data)


def buffer_entry_from(d: dict) -> BufferEntry:
    return BufferEntry(
        id=d["id"],
        ingested_at=d["ingested_at"],
        source_ptr=d["source_ptr"],
        origin_channel=OriginChannel(d["origin_channel"]),
        initial_priority=d["initial_priority"],
        claims=claims_from(d["claims"]),
        candidate_edges=tuple((t, k) for t, k in d["candidate_edges"]),
        state=BufferState(d["state"]),
        ingested_cycle=d["ingested_cycle"],
        origin_locator=d["origin_locator"],
        safety_flag=d["safety_flag"],
        reason=d["reason"],
    )


def wiki_entry_from(d: dict) -> WikiEntry:
    d = dict(d)
    d["claims"] = claims_from(d["claims"])
    d["utility_trace"] = tuple((t, o) for t, o in d["utility_trace"])
    d["cohesion_bucket"] = Bucket(d["cohesion_bucket"])
    d["state"] = WikiState(d["state"])
    d["origin_channel"] = OriginChannel(d["origin_channel"])
    d["source_ids"] = tuple(d["source_ids"])
    return WikiEntry(**d)


def edge_from(d: dict) -> Edge:
    return Edge(d["src"], d["dst"], EdgeKind(d["kind"]), d["weight"], d["live"])


def cold_from(d: dict) -> ColdObject:
    return ColdObject(
        id=d["id"],
        blob_hash=d["blob_hash"],
        origin_locator=d["origin_locator"],
        linkout_valid=d["linkout_valid"],
        state=ColdState(d["state"]),
        generation=d["generation"],
        parent=d["parent"],
    )


def audit_from(d: dict) -> AuditRecord:
    return AuditRecord(
        entry_id=d["entry_id"],
        ts=d["ts"],
        suspension_result=Verdict(d["suspension_result"]),
        outcome=Outcome(d["outcome"]),
        delta=d["delta"],
        untested=d["untested"],
        source=d["source"],
        note=d["note"],
        chain=d["chain"],
    )


def branch_from(d: dict) -> MinorityBranch:
    return MinorityBranch(
        branch_ref=d["branch_ref"],
        incumbent_id=d["incumbent_id"],
        member_ids=frozenset(d["member_ids"]),
        contradiction_edge_count=d["contradiction_edge_count"],
        cycles_open=d["cycles_open"],
        state=BranchState(d["state"]),
        size_history=tuple(d["size_history"]),
        created_cycle=d["created_cycle"],
        closure_reason=d["closure_reason"],
    )


def transition_from(d: dict) -> TransitionRecord:
    return TransitionRecord(d["tick"], d["entity"], d["event"], d["from_state"], d["to_state"])
