from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from memgov.content import claims_to_bytes, content_hash  # noqa: E402
from memgov.engine import Engine, EngineConfig  # noqa: E402
from memgov.model import ClaimTuple, WikiEntry  # noqa: E402
from memgov.store import Changeset, Store  # noqa: E402


def C(topic: str, polarity: int = 1, strength: float = 1.0, text: str = "") -> ClaimTuple:
    return ClaimTuple(topic, polarity, strength, text)


def body(*claims: ClaimTuple) -> bytes:
    return claims_to_bytes(claims)


def wiki(ident: str, *claims: ClaimTuple, **kw) -> WikiEntry:
    data = body(*claims)
    defaults = dict(commit_hash="c" * 64, blob_hash=content_hash(data), created_at=0,
                    last_accessed=0)
    defaults.update(kw)
    return WikiEntry(id=ident, claims=tuple(claims), **defaults)


def store_with(*entries: WikiEntry) -> Store:
    """In-memory store whose HEAD holds exactly ``entries``."""
    store = Store()
    cs = Changeset()
    for e in entries:
        cs.blob_writes.append(body(*e.claims))
        cs.entry_upserts.append(e)
    store.commit(cs, store.take_snapshot(), tick=0)
    return store


@pytest.fixture
def engine() -> Engine:
    return Engine(config=EngineConfig())


def promote_one(eng: Engine, text_topic: str = "x") -> str:
    """Ingest one entry and run a window so it lands in the wiki; returns its id."""
    got = eng.ingest(body(C(text_topic)))
    eng.advance(1)
    eng.run_window(audit=False)
    return got.entry.id


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record a one-line PASS/FAIL outcome for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {detail}"
        ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
