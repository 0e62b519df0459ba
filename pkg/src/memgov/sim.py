"""Seeded drift simulator.

A simulated user holds a preference bump over topics and a stance (+1/-1)
per topic; both rotate slowly with ``drift_rate``. Each cycle the user
produces claim bundles and queries, the engine ingests and answers them,
and a maintenance window runs. The generated stream depends only on the
config, never on engine state, so paired runs see identical inputs.
"""

from __future__ import annotations

import json
import math
import random
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Mapping

from .audit import AuditParams
from .consolidate import ConsolidationParams
from .content import claims_to_bytes, content_hash
from .decay import DecayConfig, VitalityWeights
from .engine import Engine, EngineConfig
from .model import LIVE_STATES, ClaimTuple, EdgeKind, WikiEntry, WikiState
from .scorer import ClaimScorer

TOP_K = 3


@dataclass(frozen=True)
class Injection:
    """A cluster of ``size`` mutually supporting entries contradicting anchor ``anchor``."""

    cycle: int
    size: int = 5
    anchor: int = 0


@dataclass(frozen=True)
class DriftConfig:
    seed: int = 0
    cycles: int = 50
    entries_per_cycle: int = 6
    topic_count: int = 12
    drift_rate: float = 0.02
    minority_injection: tuple[Injection, ...] = ()
    paired_mode: bool = False
    promotion: bool = True
    vitality_only: bool = False
    capacity: int | None = None
    self_description: int = 4
    anchors: int = 2
    queries_per_cycle: int = 6
    self_probe_every: int = 10
    audit: bool = True
    audit_every_k: int = 10
    ticks_per_cycle: int = 100

    def __post_init__(self) -> None:
        if self.cycles < 0 or self.entries_per_cycle < 0 or self.topic_count < 2:
            raise ValueError("cycles and entries_per_cycle must be >= 0, topic_count >= 2")
        if not 0.0 <= self.drift_rate <= 1.0:
            raise ValueError("drift_rate must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "DriftConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown drift config keys: {sorted(unknown)}")
        kw = dict(data)
        if "minority_injection" in kw:
            kw["minority_injection"] = tuple(
                Injection(**item) if isinstance(item, Mapping) else Injection(*item)
                for item in kw["minority_injection"])
        return cls(**kw)

    def engine_config(self, promotion: bool | None = None) -> EngineConfig:
        weights = VitalityWeights(gravity_weight=0.0) if self.vitality_only else VitalityWeights()
        return EngineConfig(
            ticks_per_cycle=self.ticks_per_cycle,
            read_k=TOP_K,
            decay=DecayConfig(weights=weights, capacity=self.capacity,
                              floor_enabled=not self.vitality_only),
            consolidation=ConsolidationParams(
                promotion_enabled=self.promotion if promotion is None else promotion),
            audit=AuditParams(enabled=self.audit, every_k=self.audit_every_k),
        )


# -- the simulated user --------------------------------------------------------

@dataclass(frozen=True)
class Ingest:
    body: bytes
    hints: tuple[tuple[str, str], ...] = ()

    @property
    def id(self) -> str:
        return content_hash(self.body)


@dataclass
class CycleInput:
    ingests: list[Ingest] = field(default_factory=list)
    queries: list[tuple[ClaimTuple, ...]] = field(default_factory=list)


class SimulatedUser:
    def __init__(self, config: DriftConfig) -> None:
        self.config = config
        self.topics = [f"k{i}" for i in range(config.topic_count)]
        self.rng = random.Random(config.seed)
        self.phase = self.rng.uniform(0, 2 * math.pi)
        self.stance_phase = self.rng.uniform(0, 2 * math.pi)
        self.self_ids: list[str] = []
        self.anchor_ids: list[str] = []
        self.recent: list[str] = []
        self.serial = 0

    def theta(self, cycle: int) -> float:
        return self.phase + 2 * math.pi * self.config.drift_rate * cycle

    def weights(self, cycle: int) -> list[float]:
        n = len(self.topics)
        th = self.theta(cycle)
        raw = [math.exp(2.0 * math.cos(2 * math.pi * k / n - th)) for k in range(n)]
        total = sum(raw)
        return [w / total for w in raw]

    def stance(self, topic: str, cycle: int) -> int:
        k = self.topics.index(topic)
        n = len(self.topics)
        th = self.stance_phase + 2 * math.pi * self.config.drift_rate * cycle / 2
        return 1 if math.cos(2 * math.pi * k / n * 2 + th) >= 0 else -1

    def alignment(self, entry: WikiEntry, cycle: int) -> float:
        """Outcome in [-1, 1]: stance agreement on the topics the user currently cares about."""
        w = dict(zip(self.topics, self.weights(cycle)))
        mean = 1.0 / len(self.topics)
        score, mass = 0.0, 0.0
        for c in entry.claims:
            if c.topic not in w:
                continue
            weight = w[c.topic] / mean
            score += weight * (1 if c.polarity == self.stance(c.topic, cycle) else -1)
            mass += weight
        return max(-1.0, min(1.0, score / mass)) if mass else 0.0

    def seed_entries(self) -> list[Ingest]:
        out = []
        for i in range(self.config.self_description):
            body = claims_to_bytes([ClaimTuple(f"self{i}", 1, 1.0, "self-description")])
            out.append(Ingest(body))
            self.self_ids.append(content_hash(body))
        for j in range(self.config.anchors):
            body = claims_to_bytes([ClaimTuple(f"a{j}", 1, 1.0, "anchor belief")])
            out.append(Ingest(body))
            self.anchor_ids.append(content_hash(body))
        return out

    def cycle_input(self, cycle: int) -> CycleInput:
        cfg = self.config
        rng = self.rng
        w = self.weights(cycle)
        out = CycleInput()
        hubs = self.self_ids + self.anchor_ids
        for _ in range(cfg.entries_per_cycle):
            n = rng.randint(2, 4)
            picked = sorted(set(rng.choices(self.topics, weights=w, k=n)))
            self.serial += 1
            claims = [ClaimTuple(t, self.stance(t, cycle), round(rng.uniform(0.5, 1.0), 3))
                      for t in picked]
            claims.append(ClaimTuple(f"f{self.serial}", 1, round(rng.uniform(0.1, 0.4), 3)))
            hints = []
            if hubs:
                hints.append((rng.choice(hubs), EdgeKind.DEPENDENCY.value))
            if self.recent and rng.random() < 0.5:
                hints.append((rng.choice(self.recent[-20:]), EdgeKind.DEPENDENCY.value))
            item = Ingest(claims_to_bytes(claims), tuple(hints))
            out.ingests.append(item)
            self.recent.append(item.id)
        for inj in cfg.minority_injection:
            if inj.cycle == cycle and self.anchor_ids:
                j = inj.anchor % len(self.anchor_ids)
                for i in range(inj.size):
                    claims = [ClaimTuple(f"a{j}", -1, 0.5), ClaimTuple(f"m{j}", 1, 0.5),
                              ClaimTuple(f"m{j}x{cycle}y{i}", 1, 0.3)]
                    out.ingests.append(Ingest(claims_to_bytes(claims)))
        for _ in range(cfg.queries_per_cycle):
            t = rng.choices(self.topics, weights=w, k=2)
            query = tuple(sorted({ClaimTuple(x, self.stance(x, cycle), 1.0) for x in t},
                                 key=lambda c: c.topic))
            out.queries.append(query)
        if cfg.self_probe_every and cycle % cfg.self_probe_every == 0:
            for i in range(cfg.self_description):
                out.queries.append((ClaimTuple(f"self{i}", 1, 1.0),))
        return out

    def probes(self, cycle: int) -> dict[str, tuple[ClaimTuple, ...]]:
        out = {t: (ClaimTuple(t, self.stance(t, cycle), 1.0),) for t in self.topics}
        for j in range(self.config.anchors):
            out[f"a{j}"] = (ClaimTuple(f"a{j}", 1, 1.0),)
            out[f"m{j}"] = (ClaimTuple(f"a{j}", -1, 1.0), ClaimTuple(f"m{j}", 1, 1.0))
        return out


# -- metrics -----------------------------------------------------------------

def shannon_entropy(counts: Mapping[Any, int]) -> float:
    total = sum(counts.values())
    if not total:
        return 0.0
    return -sum(n / total * math.log2(n / total) for n in counts.values() if n)


def _structure(view) -> dict[str, int | float]:
    entries = view.entries
    dep = [e for e in view.edges.values() if e.kind is EdgeKind.DEPENDENCY and e.live
           and e.src in entries and e.dst in entries]
    live_src = [e for e in dep if entries[e.src].state in LIVE_STATES]
    broken = [e for e in live_src if entries[e.dst].state is WikiState.ARCHIVED]
    intact = [e for e in dep if entries[e.src].state in LIVE_STATES
              and entries[e.dst].state in LIVE_STATES]
    targets: dict[str, list[str]] = {}
    for e in live_src:
        targets.setdefault(e.src, []).append(e.dst)
    orphans = sum(1 for src, dsts in targets.items()
                  if all(entries[d].state is WikiState.ARCHIVED for d in dsts))
    return {
        "dependency_edges": len(dep),
        "integrity": len(intact) / len(dep) if dep else 1.0,
        "broken_references": len(broken),
        "orphans": orphans,
    }


def _round(x: Any) -> Any:
    if isinstance(x, float):
        return round(x, 12)
    if isinstance(x, dict):
        return {k: _round(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_round(v) for v in x]
    return x


@dataclass
class RunOutput:
    report: dict[str, Any]
    engine: Engine
    probes: dict[str, list[str]]
    promoted: set[str]


def simulate(config: DriftConfig, promotion: bool | None = None) -> RunOutput:
    user = SimulatedUser(config)
    eng = Engine(config=config.engine_config(promotion), trace=False)
    for item in user.seed_entries():
        eng.ingest(item.body)
    eng.advance(1)
    eng.run_window(audit=False)
    initial_hash = {i: eng.view().entries[i].blob_hash for i in user.self_ids
                    if i in eng.view().entries}
    promoted: set[str] = set()
    compressions = 0
    injections = [{"cycle": inj.cycle, "anchor": inj.anchor % len(user.anchor_ids),
                   "protected_at_injection": None, "promoted_cycle": None}
                  for inj in config.minority_injection if user.anchor_ids]
    half = config.ticks_per_cycle // 2
    for cycle in range(config.cycles):
        data = user.cycle_input(cycle)
        for item in data.ingests:
            eng.ingest(item.body, hints=item.hints)
        for inj in injections:
            if inj["cycle"] == cycle:
                row = eng.gravity().get(user.anchor_ids[inj["anchor"]])
                inj["protected_at_injection"] = bool(row and row.protected)
        eng.advance(half)
        for q in data.queries:
            eng.read(q, outcomes=lambda e, c=cycle: user.alignment(e, c))
        eng.advance(config.ticks_per_cycle - half)
        audit = config.audit and (cycle + 1) % config.audit_every_k == 0
        for result in eng.run_window(audit=audit):
            if result.op == "consolidate":
                promoted.update(result.plan.promoted)
                for name, payload in result.plan.events:
                    if name != "promote":
                        continue
                    for inj in injections:
                        if (inj["promoted_cycle"] is None and cycle >= inj["cycle"]
                                and payload["incumbent"] == user.anchor_ids[inj["anchor"]]):
                            inj["promoted_cycle"] = cycle
            elif result.op == "decay":
                compressions += sum(1 for a in result.plan.actions if a["action"] == "compress")

    view = eng.view()
    scorer = ClaimScorer()
    live = view.live_entries()
    probes = {name: scorer.rank(q, live, TOP_K)
              for name, q in sorted(user.probes(config.cycles).items())}
    probe_topics = {t for ids in probes.values() for i in ids for t in view.entries[i].topics}
    access = Counter(i for u in view.query_log() for i in u.accessed)
    selfs = [view.entries[i] for i in user.self_ids if i in view.entries]
    stable = sum(1 for e in selfs if e.live and e.blob_hash == initial_hash.get(e.id))
    special = set(user.self_ids) | set(user.anchor_ids)
    unprotected = [e for e in view.entries.values()
                   if e.id not in special and not e.gravity_protected]
    compressed = [e for e in unprotected if e.summarization_distortion > 0]
    metrics: dict[str, Any] = {
        **_structure(view),
        "self_description_stability": stable / len(user.self_ids) if user.self_ids else 1.0,
        "self_description_ids": list(user.self_ids),
        "self_description_protected": sum(1 for e in selfs if e.gravity_protected),
        "access_entropy": shannon_entropy(access),
        "probe_topic_diversity": len(probe_topics),
        "live_entries": len(live),
        "wiki_entries": len(view.entries),
        "archived": sum(1 for e in view.entries.values() if e.state is WikiState.ARCHIVED),
        "unprotected_entries": len(unprotected),
        "unprotected_compressed": len(compressed),
        "compressed_fraction": len(compressed) / len(unprotected) if unprotected else 0.0,
        "compressions": compressions,
        "promotions": len(promoted),
        "branches": len(view.branches),
        "reads": len(view.query_log()),
        "injections": injections,
    }
    metrics["orphans_plus_broken"] = metrics["orphans"] + metrics["broken_references"]
    report = {"config": _config_dict(config, promotion), "metrics": _round(metrics),
              "probes": probes}
    return RunOutput(report, eng, probes, promoted)


def _config_dict(config: DriftConfig, promotion: bool | None) -> dict[str, Any]:
    d = asdict(config)
    d["minority_injection"] = [asdict(i) for i in config.minority_injection]
    if promotion is not None:
        d["promotion"] = promotion
    return d


def divergence(a: RunOutput, b: RunOutput) -> dict[str, Any]:
    """Per-probe symmetric difference of top-k sets, split by promoted-entry involvement."""
    promoted = a.promoted | b.promoted
    per_probe = {}
    involved = uninvolved = 0
    for name in sorted(set(a.probes) | set(b.probes)):
        sa, sb = set(a.probes.get(name, [])), set(b.probes.get(name, []))
        d = len(sa ^ sb)
        per_probe[name] = d
        if (sa | sb) & promoted:
            involved += d
        else:
            uninvolved += d
    return {
        "diverging_probes": sum(1 for d in per_probe.values() if d),
        "total": sum(per_probe.values()),
        "with_promoted": involved,
        "without_promoted": uninvolved,
        "per_probe": per_probe,
    }


def simulate_paired(config: DriftConfig) -> dict[str, Any]:
    """Two runs on the same stream: promotion on vs off, or both off when not paired."""
    a = simulate(config, promotion=True if config.paired_mode else False)
    b = simulate(config, promotion=False)
    return {"a": a.report, "b": b.report, "divergence": divergence(a, b)}


def vitality_baseline(config: DriftConfig) -> DriftConfig:
    return replace(config, vitality_only=True)


def run_report(config: DriftConfig) -> dict[str, Any]:
    """The ``sim run`` report: paired results plus the vitality-only comparison."""
    paired = simulate_paired(config)
    base = simulate(vitality_baseline(config), promotion=config.promotion)
    return {**paired, "vitality_only": base.report}


def dumps_report(report: Mapping[str, Any]) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
