from __future__ import annotations

import threading

import pytest
from hypothesis import given, settings, strategies as st

from conftest import C, body, wiki
from memgov.content import canonicalize, content_hash
from memgov.model import AuditRecord, Edge, EdgeKind, Outcome, Verdict, WikiState, validate_state
from memgov.store import (
    ROOT_COMMIT, AlreadyArchived, AtomicityFailure, Changeset, EmptyContent, InjectedCrash,
    StaleSnapshot, Store, StorageFull, archive_changes,
)

# sha256 of b"Hello\n", computed with coreutils sha256sum
HELLO_DIGEST = "66a045b452102c59d840ec097d59d9467e13a3f34f6494e539ffd32c1bb35f18"


def entries_changeset(n_entries: int = 3, n_edges: int = 5) -> Changeset:
    cs = Changeset()
    ids = []
    for k in range(n_entries):
        data = body(C(f"topic{k}"))
        cs.blob_writes.append(data)
        entry = wiki(f"e{k}", C(f"topic{k}"), commit_hash="")
        cs.entry_upserts.append(entry)
        ids.append(entry.id)
    pairs = [(a, b) for a in ids for b in ids if a != b][:n_edges]
    cs.edge_writes = [Edge(a, b, EdgeKind.DEPENDENCY, 1.0) for a, b in pairs]
    return cs


class TestContent:
    def test_golden_hello(self):
        assert content_hash(canonicalize("Hello\n")) == HELLO_DIGEST
        assert content_hash(canonicalize(b"Hello  \r\n")) == HELLO_DIGEST

    def test_nfc_normalization(self):
        assert canonicalize("é") == canonicalize("é")

    @given(st.text())
    def test_canonicalize_idempotent(self, text):
        once = canonicalize(text)
        assert canonicalize(once) == once


class TestBlobs:
    def test_put_twice_one_copy(self):
        s = Store()
        assert s.put_blob(b"abc") == s.put_blob(b"abc")
        assert s.blob_count() == 1

    def test_empty_rejected(self):
        with pytest.raises(EmptyContent):
            Store().put_blob(b"")

    def test_storage_full(self):
        s = Store(max_blobs=1)
        s.put_blob(b"a")
        with pytest.raises(StorageFull):
            s.put_blob(b"b")

    @given(st.lists(st.binary(min_size=1, max_size=16), max_size=20))
    def test_deterministic_and_count_never_decreases(self, blobs):
        s = Store()
        seen = 0
        for b in blobs:
            h = s.put_blob(b)
            assert h == content_hash(b)
            assert s.get_blob(h) == b
            assert s.blob_count() >= seen
            seen = s.blob_count()

    def test_blob_files_on_disk(self, tmp_path):
        s = Store(tmp_path)
        h = s.put_blob(b"Hello\n")
        assert (tmp_path / "objects" / h[:2] / h).read_bytes() == b"Hello\n"


class TestCommit:
    def test_empty_changeset_commits(self):
        s = Store()
        snap = s.take_snapshot()
        cid = s.commit(Changeset(), snap, tick=0)
        assert s.head.commit_id == cid != ROOT_COMMIT
        assert s.take_snapshot().index_hwm > snap.index_hwm

    def test_eight_writes_one_commit(self):
        s = Store()
        before = len(s.commit_ids())
        s.commit(entries_changeset(), s.take_snapshot(), tick=1)
        assert len(s.commit_ids()) == before + 1
        view = s.view()
        assert len(view.entries) == 3 and len(view.edges) == 5

    def test_race_on_same_snapshot(self):
        s = Store()
        snap = s.take_snapshot()
        s.commit(Changeset(meta={"a": 1}), snap, tick=1)
        with pytest.raises(StaleSnapshot):
            s.commit(Changeset(meta={"b": 1}), snap, tick=1)

    def test_concurrent_writers_exactly_one_wins(self):
        s = Store()
        snap = s.take_snapshot()
        outcomes = []

        def run(k):
            try:
                s.commit(Changeset(meta={"k": k}), snap, tick=1)
                outcomes.append("ok")
            except StaleSnapshot:
                outcomes.append("stale")

        threads = [threading.Thread(target=run, args=(k,)) for k in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(outcomes) == ["ok"] + ["stale"] * 7

    def test_snapshot_isolation(self):
        s = Store()
        s.commit(entries_changeset(1, 0), s.take_snapshot(), tick=1)
        snap = s.take_snapshot()
        assert s.take_snapshot() == snap
        s.commit(entries_changeset(3, 0), snap, tick=2)
        assert set(s.view(snap).entries) == {"e0"}
        assert set(s.view().entries) == {"e0", "e1", "e2"}

    def test_missing_blob_is_atomicity_failure(self):
        s = Store()
        cs = Changeset(entry_upserts=[wiki("e", C("t"))])
        head = s.head.commit_id
        with pytest.raises(AtomicityFailure):
            s.commit(cs, s.take_snapshot(), tick=1)
        assert s.head.commit_id == head

    def test_identical_input_identical_commit_id(self):
        a, b = Store(), Store()
        ca = a.commit(entries_changeset(), a.take_snapshot(), tick=3)
        cb = b.commit(entries_changeset(), b.take_snapshot(), tick=3)
        assert ca == cb


FAULT_POINTS = ["blobs", "blob", "index", "index-commit", "publish"]


class TestDurability:
    def test_restart_keeps_head_and_snapshot(self, tmp_path):
        s = Store(tmp_path)
        s.commit(entries_changeset(), s.take_snapshot(), tick=1)
        snap = s.take_snapshot()
        digest = s.view(snap).digest()
        s.close()
        again = Store(tmp_path)
        assert again.head.commit_id == snap.commit_id
        assert (tmp_path / "HEAD").read_text().strip() == snap.commit_id
        assert again.view(snap).digest() == digest

    @pytest.mark.parametrize("point", FAULT_POINTS)
    def test_crash_is_all_or_nothing(self, tmp_path, point):
        hits = {"n": 0}

        def fault(p):
            if p == point:
                hits["n"] += 1
                raise InjectedCrash(p)

        s = Store(tmp_path, fault=fault)
        base = s.head.commit_id
        with pytest.raises(InjectedCrash):
            s.commit(entries_changeset(), s.take_snapshot(), tick=1)
        assert hits["n"] == 1
        s.close()
        recovered = Store(tmp_path)
        view = recovered.view()
        n_entries, n_edges = len(view.entries), len(view.edges)
        assert (n_entries, n_edges) in ((0, 0), (3, 5))
        if (n_entries, n_edges) == (0, 0):
            assert recovered.head.commit_id == base
        assert validate_state(view) == []

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 4), st.integers(0, 6), st.sampled_from(FAULT_POINTS), st.data())
    def test_random_crash_points(self, n_entries, n_edges, point, data):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as d:
            skip = data.draw(st.integers(0, 3))

            def fault(p):
                nonlocal skip
                if p == point:
                    if skip == 0:
                        raise InjectedCrash(p)
                    skip -= 1

            s = Store(Path(d), fault=fault)
            cs = entries_changeset(n_entries, min(n_edges, n_entries * (n_entries - 1)))
            try:
                s.commit(cs, s.take_snapshot(), tick=1)
                crashed = False
            except InjectedCrash:
                crashed = True
            s.close()
            view = Store(Path(d)).view()
            got = (len(view.entries), len(view.edges))
            full = (len(cs.entry_upserts), len(cs.edge_writes))
            assert got in ((0, 0), full)
            if not crashed:
                assert got == full


class TestTombstone:
    def committed(self) -> Store:
        s = Store()
        s.commit(entries_changeset(), s.take_snapshot(), tick=1)
        return s

    def archive(self, s: Store, ident: str) -> str:
        entry = s.view().entries[ident]
        archived, cold, rec = archive_changes(entry, 5)
        record = AuditRecord(ident, 5, Verdict.IMPROVED, Outcome.ARCHIVED)
        cs = Changeset(entry_upserts=[archived], tombstones=[ident], cold_objects=[cold],
                       transitions=[rec], audit_records=[record])
        return s.commit(cs, s.take_snapshot(), tick=5)

    def test_archive_keeps_index_record_and_cold_copy(self):
        s = self.committed()
        self.archive(s, "e1")
        view = s.view()
        entry = view.entries["e1"]
        assert entry.state is WikiState.ARCHIVED
        cold = view.cold[entry.tombstone_cold_id]
        assert view.read_blob(cold.blob_hash) == body(C("topic1"))
        assert validate_state(view) == []

    def test_archive_twice(self):
        s = self.committed()
        self.archive(s, "e1")
        with pytest.raises(AlreadyArchived):
            archive_changes(s.view().entries["e1"], 6)
        with pytest.raises(AlreadyArchived):
            self.archive(s, "e1")

    def test_tombstone_needs_decision_record(self):
        s = self.committed()
        archived, cold, rec = archive_changes(s.view().entries["e1"], 5)
        cs = Changeset(entry_upserts=[archived], tombstones=["e1"], cold_objects=[cold])
        with pytest.raises(AtomicityFailure):
            s.commit(cs, s.take_snapshot(), tick=5)

    def test_edges_kept_but_leave_dependency_graph(self):
        s = self.committed()
        edges_before = dict(s.view().edges)
        self.archive(s, "e1")
        view = s.view()
        assert view.edges == edges_before
        assert all("e1" not in (e.src, e.dst) for e in view.dependency_edges())

    def test_inspect_returns_tombstone_and_locator(self, engine):
        from conftest import promote_one
        from memgov.engine import Engine

        ident = promote_one(engine)
        entry = engine.view().entries[ident]
        archived, cold, rec = archive_changes(entry, engine.now)
        record = AuditRecord(ident, engine.now, Verdict.IMPROVED, Outcome.ARCHIVED)
        engine.store.commit(Changeset(entry_upserts=[archived], tombstones=[ident], cold_objects=[cold],
                                      transitions=[rec], audit_records=[record]),
                            engine.store.take_snapshot(), tick=engine.now)
        got = Engine.inspect(engine, ident)
        assert got["tombstone"] is True
        assert got["cold_locator"] == f"entry:{ident}"


class TestUsageOverlay:
    def test_snapshot_sees_usage_up_to_its_hwm(self):
        s = Store()
        s.commit(entries_changeset(1, 0), s.take_snapshot(), tick=1)
        snap = s.take_snapshot()
        s.record_usage(7, [C("topic0")], ["e0"])
        assert s.view(snap).entries["e0"].access_count == 0
        now = s.view().entries["e0"]
        assert (now.access_count, now.last_accessed) == (1, 7)

    def test_usage_survives_restart(self, tmp_path):
        s = Store(tmp_path)
        s.commit(entries_changeset(1, 0), s.take_snapshot(), tick=1)
        s.record_usage(9, [C("topic0")], ["e0"], {"e0": 0.75})
        s.close()
        entry = Store(tmp_path).view().entries["e0"]
        assert entry.access_count == 1 and entry.utility_trace == ((9, 0.75),)
