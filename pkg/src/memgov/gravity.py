"""Structural gravity: PageRank centrality, prospective fragmentation cost,
the saturating base score, access-modulated decay and the protection floor.

Base gravity reads the dependency graph and nothing else. Utility traces
never enter here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import MemgovError, UnknownEntry

DEFAULT_TICKS_PER_CYCLE = 100


class EmptyDistribution(MemgovError):
    pass


@dataclass(frozen=True)
class GravityParams:
    w_c: float = 0.5
    w_f: float = 0.5
    kappa_c: float | None = None  # None means 2/|V|, fixed per graph
    kappa_f: float = 4.0
    lam: float = math.log(2) / (30 * DEFAULT_TICKS_PER_CYCLE)
    floor_percentile: float = 0.90

    def __post_init__(self) -> None:
        if not (0 <= self.w_c <= 1 and 0 <= self.w_f <= 1) or abs(self.w_c + self.w_f - 1) > 1e-12:
            raise ValueError("w_c and w_f must lie in [0, 1] and sum to 1")
        if self.kappa_c is not None and self.kappa_c <= 0:
            raise ValueError("kappa_c must be positive")
        if self.kappa_f <= 0 or self.lam <= 0:
            raise ValueError("kappa_f and lam must be positive")
        if not 0 < self.floor_percentile <= 1:
            raise ValueError("floor_percentile must lie in (0, 1]")

    @classmethod
    def with_half_life(cls, ticks: float, **kw: float) -> "GravityParams":
        return cls(lam=math.log(2) / ticks, **kw)

    def for_graph(self, n_nodes: int) -> "GravityParams":
        if self.kappa_c is not None:
            return self
        return GravityParams(self.w_c, self.w_f, 2.0 / max(n_nodes, 1), self.kappa_f, self.lam,
                             self.floor_percentile)


@dataclass(frozen=True)
class DepGraph:
    """Dependency subgraph. An edge (a, b) means a depends on b."""

    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...]

    @classmethod
    def build(cls, nodes: Iterable[str], edges: Iterable[tuple[str, str]]) -> "DepGraph":
        ns = tuple(sorted(set(nodes)))
        known = set(ns)
        es = set()
        for a, b in edges:
            if a == b:
                raise ValueError("self-edges are not allowed")
            if a in known and b in known:
                es.add((a, b))
        return cls(ns, tuple(sorted(es)))

    @classmethod
    def from_view(cls, view) -> "DepGraph":
        return cls.build((e.id for e in view.live_entries()),
                         ((e.src, e.dst) for e in view.dependency_edges()))

    def index(self) -> dict[str, int]:
        return {n: k for k, n in enumerate(self.nodes)}

    def out_masks(self) -> list[int]:
        idx = self.index()
        masks = [0] * len(self.nodes)
        for a, b in self.edges:
            masks[idx[a]] |= 1 << idx[b]
        return masks


def pagerank(graph: DepGraph, damping: float = 0.85, tol: float = 1e-10,
             max_iter: int = 100_000) -> dict[str, float]:
    """PageRank by power iteration; dependents pass rank to what they depend on.

    Dangling nodes spread their mass uniformly. Stops once the L1 change
    between iterates drops below ``tol``.
    """
    n = len(graph.nodes)
    if n == 0:
        return {}
    idx = graph.index()
    src = np.array([idx[a] for a, _ in graph.edges], dtype=np.int64)
    dst = np.array([idx[b] for _, b in graph.edges], dtype=np.int64)
    outdeg = np.bincount(src, minlength=n).astype(float)
    dangling = outdeg == 0
    share = np.zeros(len(src))
    if len(src):
        share = 1.0 / outdeg[src]
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        flow = np.zeros(n)
        np.add.at(flow, dst, r[src] * share)
        nxt = (1.0 - damping) / n + damping * (flow + r[dangling].sum() / n)
        nxt /= nxt.sum()
        done = np.abs(nxt - r).sum() < tol
        r = nxt
        if done:
            break
    return {node: float(r[k]) for k, node in enumerate(graph.nodes)}


def orphan_mask(out_masks: Sequence[int], root: int,
                preds: Sequence[Sequence[int]] | None = None) -> int:
    """Bitmask of nodes orphaned when ``root`` is removed.

    A node is orphaned once it has at least one outgoing dependency and all of
    them point into the root or already orphaned nodes; this is iterated to a
    fixed point starting from the root.
    """
    n = len(out_masks)
    orphan = 1 << root
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            ps = preds[u] if preds is not None else [p for p in range(n) if out_masks[p] >> u & 1]
            for p in ps:
                if not (orphan >> p) & 1 and out_masks[p] & ~orphan == 0:
                    orphan |= 1 << p
                    nxt.append(p)
        frontier = nxt
    return orphan & ~(1 << root)


def fragmentation_from_masks(out_masks: Sequence[int], root: int,
                             preds: Sequence[Sequence[int]] | None = None) -> int:
    """Incident dependency edges of ``root`` plus the size of its orphan cascade."""
    incident = bin(out_masks[root]).count("1")
    bit = 1 << root
    incident += sum(1 for m in out_masks if m & bit)
    return incident + bin(orphan_mask(out_masks, root, preds)).count("1")


def _preds(out_masks: Sequence[int]) -> list[list[int]]:
    preds: list[list[int]] = [[] for _ in out_masks]
    for v, m in enumerate(out_masks):
        while m:
            low = m & -m
            preds[low.bit_length() - 1].append(v)
            m ^= low
    return preds


def fragmentation(graph: DepGraph, node: str) -> int:
    idx = graph.index()
    if node not in idx:
        raise UnknownEntry(node)
    return fragmentation_from_masks(graph.out_masks(), idx[node])


def fragmentation_all(graph: DepGraph) -> dict[str, int]:
    masks = graph.out_masks()
    preds = _preds(masks)
    return {n: fragmentation_from_masks(masks, k, preds) for k, n in enumerate(graph.nodes)}


def base_gravity(c: float, f: float, p: GravityParams) -> float:
    if c < 0 or f < 0:
        raise ValueError("centrality and fragmentation must be non-negative")
    if p.kappa_c is None:
        raise ValueError("resolve kappa_c with GravityParams.for_graph first")
    return p.w_c * c / (c + p.kappa_c) + p.w_f * f / (f + p.kappa_f)


def effective_gravity(g_base: float, dt: float, p: GravityParams) -> float:
    if dt < 0:
        raise ValueError("dt must be non-negative")
    return g_base * math.exp(-p.lam * dt)


def protection_floor(values: Iterable[float], p: GravityParams) -> float:
    """Nearest-rank quantile; entries at or above it are protected."""
    ordered = sorted(values)
    if not ordered:
        raise EmptyDistribution("no base gravity values")
    # tolerance keeps e.g. 0.7 * 10 from rounding up to rank 8
    rank = max(1, math.ceil(p.floor_percentile * len(ordered) - 1e-9))
    return ordered[rank - 1]


@dataclass(frozen=True)
class GravityRow:
    id: str
    centrality: float
    fragmentation: int
    g_base: float
    g_eff: float
    protected: bool


def structural(graph: DepGraph, p: GravityParams) -> dict[str, tuple[float, int, float]]:
    """(C, F, unscaled G_base) per node."""
    pr = pagerank(graph)
    frag = fragmentation_all(graph)
    q = p.for_graph(len(graph.nodes))
    return {n: (pr[n], frag[n], base_gravity(pr[n], frag[n], q)) for n in graph.nodes}


def gravity_table(view, p: GravityParams, now: int) -> dict[str, GravityRow]:
    """Gravity for every live entry of ``view``, cached per view and params."""
    cache = view.__dict__.setdefault("_gravity_cache", {})
    base = cache.get(p)
    if base is None:
        base = structural(DepGraph.from_view(view), p)
        cache[p] = base
    rows: dict[str, GravityRow] = {}
    scaled = {}
    for ident, (c, f, g) in base.items():
        entry = view.entries[ident]
        scaled[ident] = g * entry.gravity_scale
    floor = protection_floor(scaled.values(), p) if scaled else 0.0
    for ident, (c, f, _) in base.items():
        entry = view.entries[ident]
        gb = scaled[ident]
        ge = effective_gravity(gb, max(0, now - entry.last_accessed), p)
        rows[ident] = GravityRow(ident, c, f, gb, ge, gb >= floor)
    return rows
