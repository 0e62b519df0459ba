from __future__ import annotations

import math

import pytest
from hypothesis import given, strategies as st

from memgov.sim import (
    DriftConfig, Injection, SimulatedUser, divergence, dumps_report, shannon_entropy, simulate,
    simulate_paired, vitality_baseline,
)

SMALL = dict(cycles=12, entries_per_cycle=4)


class TestEntropy:
    def test_uniform_over_eight(self):
        assert shannon_entropy({k: 5 for k in range(8)}) == pytest.approx(3.0)

    def test_edge_cases(self):
        assert shannon_entropy({}) == 0.0
        assert shannon_entropy({"a": 9, "b": 0}) == 0.0

    @given(st.dictionaries(st.integers(0, 50), st.integers(1, 100), min_size=1))
    def test_bounded_by_log_support(self, counts):
        h = shannon_entropy(counts)
        assert -1e-12 <= h <= math.log2(len(counts)) + 1e-9


class TestConfig:
    def test_from_mapping(self):
        cfg = DriftConfig.from_mapping({"seed": 2, "minority_injection": [{"cycle": 3, "size": 4}]})
        assert cfg.minority_injection == (Injection(3, 4),)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            DriftConfig.from_mapping({"sede": 2})

    @pytest.mark.parametrize("kw", [dict(drift_rate=2.0), dict(cycles=-1), dict(topic_count=1)])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            DriftConfig(**kw)

    def test_vitality_baseline_drops_the_floor(self):
        ec = vitality_baseline(DriftConfig()).engine_config()
        assert not ec.decay.floor_enabled and ec.decay.weights.gravity_weight == 0.0


class TestUser:
    def test_stream_is_seeded(self):
        def stream(seed):
            user = SimulatedUser(DriftConfig(seed=seed))
            seeds = [i.body for i in user.seed_entries()]
            return seeds + [(i.body, i.hints) for c in range(10) for i in user.cycle_input(c).ingests]

        assert stream(5) == stream(5)
        assert stream(5) != stream(6)

    def test_weights_are_a_distribution(self):
        user = SimulatedUser(DriftConfig(seed=1))
        for cycle in (0, 7, 40):
            assert sum(user.weights(cycle)) == pytest.approx(1.0)

    def test_no_drift_keeps_preferences(self):
        user = SimulatedUser(DriftConfig(seed=1, drift_rate=0.0))
        assert user.weights(0) == user.weights(30)


class TestRuns:
    def test_same_config_same_report(self):
        cfg = DriftConfig(seed=4, **SMALL)
        assert dumps_report(simulate(cfg).report) == dumps_report(simulate(cfg).report)

    @pytest.mark.parametrize("seed", [0, 1])
    def test_no_drift_no_injection_no_divergence(self, seed):
        got = simulate_paired(DriftConfig(seed=seed, drift_rate=0.0, paired_mode=True, **SMALL))
        assert got["divergence"]["total"] == 0

    def test_injected_cluster_promotes_quickly(self):
        cfg = DriftConfig(seed=3, cycles=10, entries_per_cycle=4,
                          minority_injection=(Injection(cycle=5),))
        out = simulate(cfg)
        (inj,) = out.report["metrics"]["injections"]
        assert inj["protected_at_injection"]
        assert inj["promoted_cycle"] is not None and inj["promoted_cycle"] - 5 <= 2

    def test_paired_divergence_involves_promotions(self):
        cfg = DriftConfig(seed=3, cycles=10, entries_per_cycle=4,
                          minority_injection=(Injection(cycle=5),), paired_mode=True)
        on, off = simulate(cfg, promotion=True), simulate(cfg, promotion=False)
        d = divergence(on, off)
        assert d["total"] > 0 and d["with_promoted"] > 0
        assert off.promoted == set()

    def test_unpaired_runs_agree(self):
        cfg = DriftConfig(seed=3, cycles=8, entries_per_cycle=4,
                          minority_injection=(Injection(cycle=5),))
        assert simulate_paired(cfg)["divergence"]["total"] == 0
