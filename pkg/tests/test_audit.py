from __future__ import annotations

import functools
import math
import random

import pytest

from conftest import C, store_with, wiki
from memgov.audit import (
    AuditParams, branch_is_stale, evaluate_branches, plan_audit, sample_queries, select_targets,
    suspension_test, topical_entropy,
)
from memgov.gravity import GravityRow
from memgov.model import MinorityBranch, Outcome, Verdict, WikiState
from memgov.scorer import ClaimScorer
from memgov.store import Store, UsageRecord

S = ClaimScorer()
P = AuditParams()

Q1 = (C("t", 1, 1.0),)
Q2 = (C("u", 1, 1.0),)
# A answers Q1, B answers Q2, D contradicts A, E half-overlaps Q1
A = wiki("a", C("t", 1, 1.0))
B = wiki("b", C("u", 1, 1.0))
D = wiki("d", C("t", -1, 0.6))
E = wiki("e", C("t", 1, 0.5), C("w", 1, 0.5))
CORPUS = [A, B, D, E]


def usage(query, *accessed) -> UsageRecord:
    return UsageRecord(0, 0, query, accessed)


def row(ident: str, g: float) -> GravityRow:
    return GravityRow(ident, 0.0, 0, g, g, False)


class TestSelectTargets:
    def test_small_wiki(self):
        view = store_with(*CORPUS[:3]).view()
        table = {e.id: row(e.id, 0.1) for e in CORPUS[:3]}
        assert sorted(select_targets(view, AuditParams(top_n=5), table)) == ["a", "b", "d"]

    def test_ties_prefer_older_access(self):
        # usage fields live in the overlay, so with no reads last access is creation time
        view = store_with(wiki("new", C("t"), created_at=50, last_accessed=50),
                          wiki("old", C("u"), created_at=10, last_accessed=10)).view()
        table = {"new": row("new", 0.3), "old": row("old", 0.3)}
        assert select_targets(view, AuditParams(top_n=1), table) == ["old"]

    def test_matches_comparator_oracle(self):
        rng = random.Random(3)
        stamps = [rng.randint(0, 5) for _ in range(20)]
        entries = [wiki(f"e{k:02d}", C(f"t{k}"), created_at=t, last_accessed=t) for k, t in enumerate(stamps)]
        table = {e.id: row(e.id, rng.choice([0.1, 0.2, 0.3, 0.4])) for e in entries}
        view = store_with(*entries).view()
        accessed = {e.id: view.entries[e.id].last_accessed for e in entries}

        def cmp(x, y):
            if table[x].g_base != table[y].g_base:
                return -1 if table[x].g_base > table[y].g_base else 1
            if accessed[x] != accessed[y]:
                return -1 if accessed[x] < accessed[y] else 1
            return -1 if x < y else (x > y)

        want = sorted(accessed, key=functools.cmp_to_key(cmp))[:7]
        assert select_targets(view, AuditParams(top_n=7), table) == want


class TestSuspension:
    def test_interfering_entry_improves_when_suspended(self):
        # with D: Q1 best is A at 1 - 0.6; Q2 is B at 1.  Without D: both 1.
        got = suspension_test(D, [usage(Q1), usage(Q2)], CORPUS, S, P)
        assert got.delta == pytest.approx((0.4 + 1.0) / 2 - 1.0)
        assert got.verdict is Verdict.IMPROVED

    def test_sole_answer_is_degraded(self):
        got = suspension_test(B, [usage(Q2)], CORPUS, S, P)
        assert got.delta == pytest.approx(1.0) and got.verdict is Verdict.DEGRADED

    def test_irrelevant_entry_is_unchanged(self):
        got = suspension_test(E, [usage(Q2)], CORPUS, S, P)
        assert got.delta == 0.0 and got.verdict is Verdict.UNCHANGED

    def test_no_queries_is_untested(self):
        got = suspension_test(A, [], CORPUS, S, P)
        assert got.untested and got.delta is None

    def test_sampling_keeps_latest(self):
        log = [UsageRecord(k, k, Q1, ("a",) if k % 2 else ("b",)) for k in range(10)]
        assert [u.seq for u in sample_queries(log, "a", 3)] == [5, 7, 9]


class TestBranches:
    def test_scripted_history(self):
        history = (1, 2, 3, 3, 3)
        degraded = {"x": Verdict.DEGRADED}
        decisions = []
        for k in range(1, len(history) + 1):
            b = MinorityBranch("br", "x", frozenset({"m"}), size_history=history[:k])
            decisions.append(evaluate_branches([b], degraded, P)["br"])
        assert decisions == ["keep", "keep", "keep", "keep", "close"]

    def test_grew_last_cycle_keeps(self):
        b = MinorityBranch("br", "x", frozenset({"m"}), size_history=(2, 2, 2, 3))
        assert not branch_is_stale(b, 3)
        assert evaluate_branches([b], {"x": Verdict.DEGRADED}, P) == {"br": "keep"}

    def test_dead_weight_incumbent_keeps(self):
        b = MinorityBranch("br", "x", frozenset({"m"}), size_history=(3, 3, 3))
        assert evaluate_branches([b], {"x": Verdict.UNCHANGED}, P) == {"br": "keep"}
        assert evaluate_branches([b], {}, P) == {"br": "keep"}


class TestEntropy:
    def test_uniform_over_eight_topics(self):
        qs = [UsageRecord(k, 0, (C(f"t{k}"),), ()) for k in range(8)]
        assert topical_entropy(qs) == pytest.approx(3.0)

    def test_degenerate(self):
        assert topical_entropy([]) == 0.0
        assert topical_entropy([usage(Q1)] * 4) == 0.0

    def test_skewed(self):
        qs = [usage(Q1)] * 3 + [usage(Q2)]
        assert topical_entropy(qs) == pytest.approx(-(0.75 * math.log2(0.75) + 0.25 * math.log2(0.25)))


class TestPlan:
    @pytest.fixture
    def plan(self):
        store = store_with(*CORPUS)
        store.record_usage(1, Q1, ["a", "d", "e"])
        store.record_usage(2, Q2, ["b", "e"])
        return store, plan_audit(store.view(), 100, S, AuditParams(top_n=4))

    def test_outcome_mapping(self, plan):
        _, p = plan
        got = {r["entry"]: (r["verdict"], r["outcome"]) for r in p.rows}
        assert got == {
            "a": ("degraded", "restored"),
            "b": ("degraded", "restored"),
            "d": ("improved", "archived"),
            "e": ("unchanged", "gravity_reduced"),
        }

    def test_changes(self, plan):
        store, p = plan
        cs = p.changeset
        assert cs.tombstones == ["d"]
        (cold,) = cs.cold_objects
        assert cold.blob_hash == D.blob_hash
        upserts = {e.id: e for e in cs.entry_upserts}
        assert upserts["d"].state is WikiState.ARCHIVED
        assert upserts["e"].gravity_scale == pytest.approx(P.reduction)
        assert {r.outcome for r in cs.audit_records} == set(Outcome)
        # planning is read-only
        assert store.view().entries["d"].state is WikiState.ACTIVE

    def test_empty_wiki(self):
        p = plan_audit(Store().view(), 0)
        assert p.rows == [] and p.changeset.audit_records == []
