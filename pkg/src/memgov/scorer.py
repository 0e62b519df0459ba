"""Semantic judgments behind a small interface, with a claim-tuple reference stub.

The stub is deliberately arithmetic: every number it produces can be
recomputed by hand from the claim lists.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Protocol, Sequence

from .model import ClaimTuple, MemgovError, WikiEntry


class EmptyClaims(MemgovError):
    pass


@dataclass(frozen=True)
class ScoreProfile:
    similarity: float
    contradiction: float
    task_alignment: float


class Scorer(Protocol):
    def score_pair(self, a: Sequence[ClaimTuple], b: Sequence[ClaimTuple]) -> ScoreProfile: ...

    def similarity(self, a: Sequence[ClaimTuple], b: Sequence[ClaimTuple]) -> float: ...

    def contradiction(self, a: Sequence[ClaimTuple], b: Sequence[ClaimTuple]) -> float: ...

    def task_alignment(self, a: Sequence[ClaimTuple]) -> float: ...

    def query_score(self, query: Sequence[ClaimTuple], corpus: Iterable[WikiEntry],
                    snapshot: object = None) -> float: ...


@lru_cache(maxsize=65536)
def _keyed(claims: tuple[ClaimTuple, ...]) -> dict[tuple[str, int], float]:
    out: dict[tuple[str, int], float] = {}
    for c in claims:
        key = (c.topic, c.polarity)
        if c.strength > out.get(key, -1.0):
            out[key] = c.strength
    return out


@lru_cache(maxsize=65536)
def _topics(claims: tuple[ClaimTuple, ...]) -> frozenset[str]:
    return frozenset(c.topic for c in claims)


def _clamp(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


@lru_cache(maxsize=1 << 18)
def _similarity(ta: tuple[ClaimTuple, ...], tb: tuple[ClaimTuple, ...]) -> float:
    if not _topics(ta) & _topics(tb):
        return 0.0
    ka, kb = _keyed(ta), _keyed(tb)
    num = 0.0
    den = 0.0
    for key in sorted(ka.keys() | kb.keys()):
        sa, sb = ka.get(key, 0.0), kb.get(key, 0.0)
        num += min(sa, sb)
        den += max(sa, sb)
    return num / den if den > 0 else 0.0


@lru_cache(maxsize=1 << 18)
def _contradiction(ta: tuple[ClaimTuple, ...], tb: tuple[ClaimTuple, ...]) -> float:
    shared = _topics(ta) & _topics(tb)
    if not shared:
        return 0.0
    ka, kb = _keyed(ta), _keyed(tb)
    total = 0.0
    for topic in sorted(shared):
        best = 0.0
        for pol in (-1, 1):
            sa = ka.get((topic, pol))
            sb = kb.get((topic, -pol))
            if sa is not None and sb is not None:
                best = max(best, min(sa, sb))
        total += best
    return total / len(shared)


class ClaimScorer:
    """Reference scorer over claim tuples.

    similarity: weighted Jaccard over (topic, polarity) keys, sum of minimum
    strengths over sum of maximum strengths.
    contradiction: mean over shared topics of the strongest opposing pair,
    where an opposing pair scores min(strength_a, strength_b).
    task_alignment: share of the entry's topics in the configured task set.
    """

    def __init__(self, task_topics: Iterable[str] = ()) -> None:
        self.task_topics = frozenset(task_topics)

    def similarity(self, a: Sequence[ClaimTuple], b: Sequence[ClaimTuple]) -> float:
        return _similarity(tuple(a), tuple(b))

    def contradiction(self, a: Sequence[ClaimTuple], b: Sequence[ClaimTuple]) -> float:
        return _contradiction(tuple(a), tuple(b))

    def task_alignment(self, a: Sequence[ClaimTuple]) -> float:
        topics = _topics(tuple(a))
        if not topics or not self.task_topics:
            return 0.0
        return len(topics & self.task_topics) / len(topics)

    def score_pair(self, a: Sequence[ClaimTuple], b: Sequence[ClaimTuple]) -> ScoreProfile:
        if not a or not b:
            raise EmptyClaims("score_pair needs two non-empty claim lists")
        return ScoreProfile(self.similarity(a, b), self.contradiction(a, b), self.task_alignment(a))

    def query_score(self, query: Sequence[ClaimTuple], corpus: Iterable[WikiEntry],
                    snapshot: object = None) -> float:
        """Best (similarity minus interference) over the corpus, clamped to [0, 1].

        Interference against a candidate is the strongest contradiction any
        other corpus entry raises against it.
        """
        entries = sorted(corpus, key=lambda e: e.id)
        if not entries or not query:
            return 0.0
        by_topic: dict[str, list[WikiEntry]] = {}
        for e in entries:
            for t in e.topics:
                by_topic.setdefault(t, []).append(e)
        best = 0.0
        for cand in entries:
            sim = self.similarity(query, cand.claims)
            if sim <= 0.0:
                continue
            # only entries sharing a topic can contradict the candidate
            rivals = {o.id: o for t in cand.topics for o in by_topic[t] if o.id != cand.id}
            interference = 0.0
            for ident in sorted(rivals):
                interference = max(interference, self.contradiction(rivals[ident].claims, cand.claims))
            best = max(best, _clamp(sim - interference))
        return best

    def rank(self, query: Sequence[ClaimTuple], corpus: Iterable[WikiEntry], k: int = 3) -> list[str]:
        """Ids of the top-k entries by similarity to ``query`` (ties by id)."""
        scored = [(self.similarity(query, e.claims), e.id) for e in corpus]
        scored = [(s, i) for s, i in scored if s > 0.0]
        scored.sort(key=lambda item: (-item[0], item[1]))
        return [i for _, i in scored[:k]]
