from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from conftest import C, body, store_with, wiki
from memgov.conformance import check_events
from memgov.contextualize import (
    DEFAULT_DEPTH, MissingColdObject, archive_original, compress_to_depth, infer_depth,
)
from memgov.engine import Engine
from memgov.model import ColdObject, ColdState
from memgov.store import Changeset, Store, UsageRecord

COLD = ColdObject("cold", "b" * 64, "doc")


def query(*topics: str) -> UsageRecord:
    return UsageRecord(0, 0, tuple(C(t) for t in topics), ())


class TestInferDepth:
    def test_default_without_neighbors(self):
        view = Store().view()
        assert infer_depth([C("t")], view, []) == DEFAULT_DEPTH == 2

    def test_hot_dense_neighborhood_clamps_to_five(self):
        view = store_with(wiki("a", C("t"), C("u"), C("v"))).view()
        assert infer_depth([C("t")], view, [query("t")] * 10) == 5

    def test_six_entry_fixture_by_hand(self):
        # entry k has k+1 claims over its own topics
        entries = [wiki(f"e{k}", *[C(f"s{k}-{j}") for j in range(k + 1)]) for k in range(6)]
        view = store_with(*entries).view()
        source = [C("s2-0"), C("s3-0")]
        # neighborhood = e2 (3 claims) and e3 (4 claims); mean 3.5
        # rank = share of live entries with <= 3.5 claims = 3/6
        # query density = 3 of 4 recent queries touch s2-0 or s3-0
        qs = [query("s2-0"), query("s3-0"), query("s3-0", "zz"), query("zz")]
        # 1 + 4 * 0.5 * 0.75 = 2.5, rounded half up
        assert infer_depth(source, view, qs) == 3

    def test_cold_neighborhood_bottoms_out(self):
        view = store_with(wiki("a", C("t"))).view()
        assert infer_depth([C("t")], view, [query("other")]) == 1


class TestCompress:
    def test_ten_claims_depth_two(self):
        claims = [C(f"t{k}", 1, k / 10) for k in range(10)]
        kept, link = compress_to_depth(claims, 2, COLD)
        assert list(kept) == sorted(claims, key=lambda c: -c.strength)[:4]
        assert link == "cold"

    def test_depth_five_keeps_everything(self):
        claims = [C(f"t{k}", 1, 0.5) for k in range(7)]
        assert set(compress_to_depth(claims, 5, COLD)[0]) == set(claims)

    def test_requires_cold_copy(self):
        with pytest.raises(MissingColdObject):
            compress_to_depth([C("t")], 3, None)

    def test_depth_range(self):
        with pytest.raises(ValueError):
            compress_to_depth([C("t")], 0, COLD)

    @given(st.lists(st.tuples(st.sampled_from("abcdefgh"), st.floats(0, 1)), min_size=1, max_size=20))
    def test_depth_monotone(self, items):
        claims = [C(t, 1, s, text=str(k)) for k, (t, s) in enumerate(items)]
        prev: set = set()
        for d in range(1, 6):
            kept = set(compress_to_depth(claims, d, COLD)[0])
            assert prev <= kept
            prev = kept
        assert prev == set(claims)


class TestArchive:
    def test_idempotent(self):
        store = Store()
        h = store.put_blob(body(C("t")))
        cold, created = archive_original(store.view(), h, "doc")
        assert created
        store.commit(Changeset(cold_objects=[cold]), store.take_snapshot(), tick=0)
        again, created_again = archive_original(store.view(), h, "doc")
        assert again == cold and not created_again
        assert len(store.view().cold) == 1

    def test_missing_source(self):
        with pytest.raises(MissingColdObject):
            archive_original(Store().view(), "0" * 64, "doc")


def document_engine(n: int = 10) -> tuple[Engine, str]:
    eng = Engine()
    raw = body(*[C(f"t{k}", 1, (k + 1) / n) for k in range(n)])
    ident = eng.ingest(raw, channel="document", locator="file:///doc.txt").entry.id
    eng.advance(1)
    eng.run_window(audit=False)
    return eng, ident


class TestCycle:
    def test_external_source_is_archived_then_fitted(self):
        eng, ident = document_engine()
        entry = eng.view().entries[ident]
        assert entry.depth == DEFAULT_DEPTH and len(entry.claims) == 4
        cold = eng.view().cold[entry.cold_id]
        assert cold.origin_locator == "file:///doc.txt"
        assert eng.cold_fetch(cold.id) == body(*[C(f"t{k}", 1, (k + 1) / 10) for k in range(10)])
        ops = [e.op for e in eng.events.events]
        assert ops.index("cold-create") < ops.index("contextualize")
        assert check_events(eng.events.events) == []

    def test_conversation_is_not_contextualized(self):
        eng = Engine()
        ident = eng.ingest(body(*[C(f"t{k}") for k in range(10)])).entry.id
        eng.advance(1)
        eng.run_window(audit=False)
        entry = eng.view().entries[ident]
        assert entry.cold_id is None and len(entry.claims) == 10

    def test_context_shift_recompresses_and_keeps_prior(self):
        eng, ident = document_engine()
        first = eng.view().entries[ident]
        for _ in range(10):
            eng.read([C("t0")])
        eng.advance(100)
        result = eng.contextualize()
        (action,) = result.plan.actions
        assert action["action"] == "recompress" and action["depth"] == 5
        view = eng.view()
        second = view.entries[ident]
        assert len(second.claims) == 10 and second.cold_id != first.cold_id
        old, new = view.cold[first.cold_id], view.cold[second.cold_id]
        assert old.state is ColdState.RECOMPRESSED and new.parent == old.id
        assert eng.cold_fetch(old.id) == eng.cold_fetch(new.id)

    def test_linkouts_resolve_after_many_cycles(self):
        eng, ident = document_engine()
        cold_id = eng.view().entries[ident].cold_id
        for _ in range(30):
            eng.advance(100)
            eng.run_window(audit=True)
        assert eng.cold_fetch(cold_id)
        for entry in eng.view().entries.values():
            if entry.cold_id is not None:
                assert eng.view().cold[entry.cold_id].linkout_valid

    def test_no_contextualize_inside_ingest(self):
        eng, _ = document_engine()
        eng.ingest(body(C("new")), channel="document")
        inside = False
        for ev in eng.events.events:
            if ev.op == "ingest-start":
                inside = True
            elif ev.op == "ingest-end":
                inside = False
            assert not (inside and ev.op in ("contextualize", "cold-create"))
