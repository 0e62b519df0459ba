"""Trace events: the totally ordered record the conformance rules run over."""

from __future__ import annotations

import contextlib
import contextvars
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator

_current_task: contextvars.ContextVar[str | None] = contextvars.ContextVar("memgov_task", default=None)


def current_task() -> str | None:
    return _current_task.get()


@contextlib.contextmanager
def task_scope(task: str) -> Iterator[str]:
    token = _current_task.set(task)
    try:
        yield task
    finally:
        _current_task.reset(token)


@dataclass(frozen=True)
class TraceEvent:
    tick: int
    seq: int
    op: str
    payload: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"tick": self.tick, "seq": self.seq, "op": self.op, **self.payload},
                          sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TraceEvent":
        payload = {k: v for k, v in d.items() if k not in ("tick", "seq", "op")}
        return cls(int(d["tick"]), int(d["seq"]), str(d["op"]), payload)


class EventLog:
    """Append-only event stream; ``clock`` supplies the tick for each event."""

    def __init__(self, clock: Callable[[], int], *, enabled: bool = True,
                 path: Path | None = None) -> None:
        self._clock = clock
        self.enabled = enabled
        self.events: list[TraceEvent] = []
        self._lock = threading.Lock()
        self._path = path
        self._seq = 0
        if path is not None and path.exists():
            for line in path.read_text().splitlines():
                if line.strip():
                    self.events.append(TraceEvent.from_dict(json.loads(line)))
            self._seq = self.events[-1].seq + 1 if self.events else 0

    def emit(self, op: str, **payload: Any) -> None:
        if not self.enabled:
            return
        task = payload.pop("task", None) or current_task()
        if task is not None:
            payload["task"] = task
        with self._lock:
            event = TraceEvent(self._clock(), self._seq, op, payload)
            self._seq += 1
            self.events.append(event)
            if self._path is not None:
                with self._path.open("a") as fh:
                    fh.write(event.to_json() + "\n")

    def __len__(self) -> int:
        return len(self.events)

    def since(self, index: int) -> list[TraceEvent]:
        return self.events[index:]

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)
