from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import body
from memgov.engine import Engine
from memgov.gravity import (
    DepGraph, EmptyDistribution, GravityParams, base_gravity, effective_gravity, fragmentation,
    fragmentation_all, pagerank, protection_floor, structural,
)
from memgov.model import ClaimTuple, UnknownEntry
from oracles import (
    all_rooted_digraphs, canonical_rooted, fragmentation_oracle, incident_vectorized,
    orphans_vectorized, rooted_digraph_cover,
)

P = GravityParams().for_graph(10)


def dense_pagerank(nodes, edges, damping=0.85, tol=1e-10):
    """Column-stochastic Google matrix iterated until the residual is below tol."""
    n = len(nodes)
    idx = {v: k for k, v in enumerate(nodes)}
    m = np.zeros((n, n))
    for a, b in edges:
        m[idx[b], idx[a]] = 1.0
    for col in range(n):
        s = m[:, col].sum()
        m[:, col] = m[:, col] / s if s else 1.0 / n
    g = damping * m + (1 - damping) / n
    r = np.full(n, 1 / n)
    while True:
        nxt = g @ r
        if np.abs(nxt - r).sum() < tol:
            return dict(zip(nodes, nxt))
        r = nxt


class TestCentrality:
    def test_empty_single_two_cycle(self):
        assert pagerank(DepGraph.build([], [])) == {}
        assert pagerank(DepGraph.build(["a"], [])) == {"a": pytest.approx(1.0)}
        two = pagerank(DepGraph.build("ab", [("a", "b"), ("b", "a")]))
        assert two["a"] == pytest.approx(0.5) and two["b"] == pytest.approx(0.5)

    def test_star_against_power_iteration_oracle(self):
        nodes = ["h", "l1", "l2", "l3", "l4"]
        edges = [(f"l{k}", "h") for k in range(1, 5)]
        got = pagerank(DepGraph.build(nodes, edges))
        want = dense_pagerank(nodes, edges)
        for v in nodes:
            assert got[v] == pytest.approx(want[v], abs=1e-9)
        assert got["h"] > 0.4

    def test_random_graphs_against_oracle(self):
        rng = random.Random(1)
        for _ in range(30):
            n = rng.randint(1, 9)
            nodes = [f"n{k}" for k in range(n)]
            edges = {(a, b) for a in nodes for b in nodes if a != b and rng.random() < 0.25}
            got = pagerank(DepGraph.build(nodes, edges))
            want = dense_pagerank(nodes, sorted(edges))
            assert sum(got.values()) == pytest.approx(1.0)
            for v in nodes:
                assert got[v] == pytest.approx(want[v], abs=1e-8)


class TestFragmentation:
    def test_examples(self):
        assert fragmentation(DepGraph.build(["a"], []), "a") == 0
        chain = DepGraph.build("abc", [("a", "b"), ("b", "c")])
        assert fragmentation(chain, "b") == 3
        star = DepGraph.build(["h", "1", "2", "3", "4"], [(k, "h") for k in "1234"])
        assert fragmentation(star, "h") == 8

    def test_unknown(self):
        with pytest.raises(UnknownEntry):
            fragmentation(DepGraph.build(["a"], []), "z")

    def test_prospective_not_citation_count(self):
        # nothing depends on d, yet removing it breaks its own dependency links
        g = DepGraph.build("abd", [("d", "a"), ("d", "b")])
        assert fragmentation(g, "d") == 2

    def test_cycle_outside_root_survives(self):
        g = DepGraph.build("rab", [("a", "b"), ("b", "a"), ("a", "r")])
        assert fragmentation(g, "r") == 1

    def test_cascade_through_chain(self):
        g = DepGraph.build("rabc", [("a", "r"), ("b", "a"), ("c", "b")])
        assert fragmentation(g, "r") == 1 + 3

    def test_vectorized_oracle_agrees_with_graph_oracle(self):
        masks = all_rooted_digraphs(4)[::37]
        want = incident_vectorized(masks) + orphans_vectorized(masks)
        for row, w in zip(masks, want):
            nodes = range(4)
            edges = [(u, v) for u in nodes for v in nodes if int(row[u]) >> v & 1]
            assert fragmentation_oracle(nodes, edges, 0) == w

    @pytest.mark.parametrize("n", [3, 4])
    def test_reduced_sweep_covers_every_class(self, n):
        full = {canonical_rooted(row, n) for row in all_rooted_digraphs(n)}
        reduced = {canonical_rooted(row, n) for row in rooted_digraph_cover(n)}
        assert reduced == full

    def test_matches_oracle_on_examples(self):
        rng = random.Random(7)
        for _ in range(100):
            n = rng.randint(1, 8)
            nodes = [str(k) for k in range(n)]
            edges = {(a, b) for a in nodes for b in nodes if a != b and rng.random() < 0.3}
            g = DepGraph.build(nodes, edges)
            all_f = fragmentation_all(g)
            for v in nodes:
                assert all_f[v] == fragmentation(g, v) == fragmentation_oracle(nodes, edges, v)


class TestBaseGravity:
    def test_examples(self):
        p = GravityParams(kappa_c=0.2)
        assert base_gravity(0, 0, p) == 0
        assert base_gravity(0.2, 0, p) == pytest.approx(0.25)
        assert base_gravity(1e12, 1e12, p) < 1

    def test_unresolved_kappa(self):
        with pytest.raises(ValueError):
            base_gravity(0.1, 1, GravityParams())

    @pytest.mark.parametrize("kw", [dict(w_c=0.7, w_f=0.7), dict(kappa_f=0), dict(floor_percentile=0)])
    def test_param_validation(self, kw):
        with pytest.raises(ValueError):
            GravityParams(**kw)

    @given(st.floats(0, 1e3), st.floats(1e-6, 1e3), st.floats(0, 1e3))
    def test_monotone_in_c(self, c, dc, f):
        assert base_gravity(c + dc, f, P) >= base_gravity(c, f, P)

    @given(st.floats(0, 1e3), st.floats(0, 1e3), st.floats(1e-6, 1e3))
    def test_monotone_in_f(self, c, f, df):
        assert base_gravity(c, f + df, P) >= base_gravity(c, f, P)

    @given(st.floats(1e-6, 1e3), st.floats(0, 1e3))
    def test_sublinear_in_c(self, c, f):
        g0, g1, g2 = base_gravity(0, f, P), base_gravity(c, f, P), base_gravity(2 * c, f, P)
        assert g2 - g1 <= g1 - g0

    @given(st.floats(0, 1e300), st.floats(0, 1e300))
    def test_bounded(self, c, f):
        assert 0 <= base_gravity(c, f, P) <= 1


class TestEffectiveGravity:
    def test_half_life(self):
        p = GravityParams.with_half_life(250)
        assert effective_gravity(0.8, 0, p) == 0.8
        assert effective_gravity(0.8, 250, p) == pytest.approx(0.4, abs=1e-12)

    def test_negative_dt(self):
        with pytest.raises(ValueError):
            effective_gravity(0.5, -1, GravityParams())

    @given(st.floats(0, 1), st.floats(0, 1e6), st.floats(0, 1e6))
    def test_monotone_non_increasing(self, g, t1, t2):
        lo, hi = sorted((t1, t2))
        assert effective_gravity(g, hi, P) <= effective_gravity(g, lo, P)

    def test_protection_uses_base_not_effective(self):
        eng = Engine()
        hub = eng.ingest(body(ClaimTuple("hub", 1, 1.0))).entry.id
        eng.advance(1)
        eng.run_window(audit=False)
        for k in range(6):
            eng.ingest(body(ClaimTuple(f"leaf{k}", 1, 1.0)), hints=[(hub, "dependency")])
        eng.advance(1)
        eng.run_window(audit=False)
        eng.advance(1_000_000)
        row = eng.gravity()[hub]
        assert row.g_eff < 1e-6 * row.g_base
        assert row.protected


class TestFloor:
    def test_nearest_rank_by_hand(self):
        values = [k / 10 for k in range(1, 11)]
        floor = protection_floor(values, GravityParams())
        # nearest rank: ceil(0.9 * 10) = 9th smallest value
        assert floor == pytest.approx(0.9)
        assert sum(v >= floor for v in values) == 2

    def test_ties_and_single(self):
        assert protection_floor([0.3] * 7, GravityParams()) == 0.3
        assert protection_floor([0.05], GravityParams()) == 0.05

    def test_empty(self):
        with pytest.raises(EmptyDistribution):
            protection_floor([], GravityParams())

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 1))
    def test_monotone_protection(self, values, pct):
        floor = protection_floor(values, GravityParams(floor_percentile=pct))
        protected = [v for v in values if v >= floor]
        unprotected = [v for v in values if v < floor]
        assert protected
        if unprotected:
            assert min(protected) > max(unprotected)


class TestSeparation:
    def test_base_gravity_ignores_usage(self):
        def build(with_outcomes: bool) -> dict:
            eng = Engine()
            hub = eng.ingest(body(ClaimTuple("hub", 1, 1.0))).entry.id
            eng.advance(1)
            eng.run_window(audit=False)
            for k in range(3):
                eng.ingest(body(ClaimTuple(f"leaf{k}", 1, 1.0)), hints=[(hub, "dependency")])
            eng.advance(1)
            eng.run_window(audit=False)
            for _ in range(5):
                eng.read([ClaimTuple("hub", 1, 1.0)],
                         outcomes=(lambda e: 1.0) if with_outcomes else None)
            return {k: v.g_base for k, v in eng.gravity().items()}

        assert build(True) == build(False)

    def test_structural_only_sees_graph(self):
        g = DepGraph.build("abc", [("a", "b"), ("c", "b")])
        rows = structural(g, GravityParams())
        assert rows["b"][0] > rows["a"][0]
        assert rows["b"][1] == 4
        assert math.isclose(rows["b"][2], base_gravity(rows["b"][0], 4, GravityParams().for_graph(3)))
