from __future__ import annotations

import json
from importlib.resources import files

import pytest

from memgov.conformance import (
    RULES, MalformedTrace, by_rule, check_events, parse_trace, run_trace, violated_rules,
)
from memgov.events import TraceEvent
from memgov.traces import check_promotion_story, minority_promotion

H = "a" * 64
SNAP = {"commit_id": "c" * 64, "index_hwm": 1}


def data(name: str) -> str:
    return str(files("memgov").joinpath(f"data/{name}"))


def trace(*items: tuple[str, dict]) -> list[TraceEvent]:
    return [TraceEvent(0, k, op, dict(payload)) for k, (op, payload) in enumerate(items)]


def ingest(*inner: tuple[str, dict], task: str = "ingest-1") -> list[tuple[str, dict]]:
    return [("ingest-start", {"task": task}), *[(op, {**p, "task": task}) for op, p in inner],
            ("ingest-end", {"task": task})]


def run(op: str, *inner: tuple[str, dict], task: str | None = None, **start) -> list[tuple[str, dict]]:
    task = task or f"{op}-1"
    head = {"task": task, "operation": op, "lane": "sleep", "snapshot": SNAP, "config": "x", **start}
    return [("run-start", head), *[(o, {**p, "task": task, "operation": op}) for o, p in inner],
            ("run-end", {"task": task, "operation": op})]


COMMIT = ("commit", {"commit": "1" * 64, "snapshot": SNAP, "config": "x", "changes": "2" * 64})

VIOLATIONS = {
    "TriageCoherenceWork": ingest(("score", {"kind": "contradiction"})),
    "TriageMissingIdentity": ingest(("buffer-write", {"id": "short"})),
    "TriageDuplicateEntry": ingest(("buffer-write", {"id": H})) + ingest(("buffer-write", {"id": H}),
                                                                         task="ingest-2"),
    "TriageWikiWrite": ingest(("wiki-write", {"entry": H})),
    "TriageWikiRead": ingest(("wiki-read", {"snapshot": SNAP})),
    "MissingLinkout": run("contextualize", ("contextualize", {"source": H, "cold": None})),
    "ContextualizeOutsideCycle": [("cold-create", {"cold": "k"}), ("contextualize", {"source": H, "cold": "k"})],
    "MissingColdObject": run("contextualize", ("contextualize", {"source": H, "cold": "k"})),
    "OriginalDiscarded": [("cold-delete", {"cold": "k"})],
    "PhaseOrderViolation": run("consolidate", ("phase1-start", {}), ("phase2-start", {})),
    "MissingSnapshot": run("consolidate", snapshot=None),
    "NonReproducible": run("consolidate", COMMIT) + run(
        "consolidate", ("commit", {**COMMIT[1], "changes": "3" * 64}), task="consolidate-2"),
    "MultipleCommitsPerRun": run("consolidate", COMMIT, COMMIT),
    "MinorityDiscarded": [("branch-create", {"branch": "branch/1", "members": [H]}),
                          ("transition", {"entity": H, "to": "expired"})],
    "NonAtomicEdges": run("consolidate", COMMIT, ("index-write", {"commit": "9" * 64})),
    "VitalityTermElimination": run("decay", ("decay-pass", {"terms": ["recency", "frequency"]})),
    "ProtectedEntryDecayed": run("decay", ("compress", {"entry": H, "g_base": 0.5, "floor": 0.4})),
    "DeletionInsteadOfCompression": run("decay", ("archive", {"entry": H})),
    "AuditPermanentDeletion": run("audit", ("audit-record", {"entry": H}), ("delete", {"entry": H})),
    "DegradedNotRestored": run("audit", ("audit-record", {"entry": H, "verdict": "degraded",
                                                          "outcome": "archived"})),
    "SilentBranchClosure": [("transition", {"entity": "branch/1", "to": "closed"})],
    "AuditRecordAfterTransition": run("audit", ("gravity-reduce", {"entry": H}),
                                      ("audit-record", {"entry": H})),
    "ReadBlocked": [("hot-complete", {"kind": "read", "latency": 80, "budget": 50})],
    "HardDelete": [("hard-delete", {"id": H})],
    "LaneViolation": run("consolidate", lane="hot"),
}


def test_every_rule_has_a_fixture():
    assert set(VIOLATIONS) == {r.name for r in RULES}


@pytest.mark.parametrize("rule", sorted(VIOLATIONS))
def test_rule_fires(rule):
    got = violated_rules(check_events(trace(*VIOLATIONS[rule])))
    assert rule in got


def test_clean_engine_trace():
    story = minority_promotion()
    assert check_promotion_story(story) == []
    assert check_events(story.engine.events.events) == []


class TestBundled:
    def test_trace_one_is_clean(self):
        assert run_trace(data("trace-1.jsonl")) == []

    def test_trace_one_regenerates_exactly(self):
        with open(data("trace-1.jsonl")) as fh:
            assert minority_promotion().engine.events.to_jsonl() == fh.read()

    def test_trace_two_has_both_violations(self):
        got = run_trace(data("trace-2.jsonl"))
        assert violated_rules(got) == {"TriageWikiRead", "TriageCoherenceWork"}
        grouped = by_rule(got)
        assert [v.seq for v in grouped["TriageCoherenceWork"]] == [15]
        assert [v.seq for v in grouped["TriageWikiRead"]] == [16]


class TestParse:
    @pytest.mark.parametrize("lines", [
        ["not json"],
        [json.dumps({"seq": 0, "op": "x"})],
        [json.dumps({"tick": "0", "seq": 0, "op": "x"})],
        [json.dumps({"tick": 0, "seq": 1, "op": "x"}), json.dumps({"tick": 0, "seq": 0, "op": "y"})],
        ["[1, 2]"],
    ])
    def test_malformed(self, lines):
        with pytest.raises(MalformedTrace):
            parse_trace(lines)

    def test_blank_lines_and_roundtrip(self):
        evs = trace(("a", {"x": 1}), ("b", {}))
        lines = [e.to_json() for e in evs]
        assert parse_trace(["", lines[0], "  ", lines[1]]) == evs

    def test_violation_json(self):
        (v,) = check_events(trace(("hard-delete", {"id": H})))
        assert json.loads(v.to_json()) == {"rule": "HardDelete", "seq": 0, "detail": v.detail}
