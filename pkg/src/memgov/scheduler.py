"""Hot lane and sleep lane.

The hot lane runs ingestion and reads immediately and measures each call
against a latency budget. The sleep lane decides when a maintenance window
may start from a device/user state vector, runs the window, and aborts
before commit if conditions change underneath it.
"""

from __future__ import annotations

import gc
import random
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Protocol

from .engine import Engine, RunResult, WindowAborted
from .model import MemgovError

HOT_KINDS = frozenset({"ingest", "triage", "read"})
SLEEP_KINDS = frozenset({"contextualize", "consolidate", "decay", "audit", "window"})


class LaneError(MemgovError):
    """A task was submitted to the wrong lane."""


@dataclass(frozen=True)
class HomeostasisVector:
    interaction_recency: int
    thermal: float
    battery_trajectory: float
    storage_pressure: float
    next_session_eta: int | None = None

    def __post_init__(self) -> None:
        if self.interaction_recency < 0:
            raise ValueError("interaction_recency must be non-negative")
        if not 0.0 <= self.thermal <= 1.0 or not 0.0 <= self.storage_pressure <= 1.0:
            raise ValueError("thermal and storage_pressure must lie in [0, 1]")


class StateProvider(Protocol):
    def sample(self, now: int) -> HomeostasisVector: ...


@dataclass
class FixedProvider:
    vector: HomeostasisVector

    def sample(self, now: int) -> HomeostasisVector:
        return self.vector


@dataclass
class SimulatedProvider:
    """Seeded device model: a day/night activity rhythm plus bounded noise.

    The same (seed, tick) always yields the same vector.
    """

    seed: int = 0
    day_ticks: int = 1000
    active_share: float = 0.6

    def sample(self, now: int) -> HomeostasisVector:
        rng = random.Random(f"{self.seed}:{now}")
        phase = (now % self.day_ticks) / self.day_ticks
        active = phase < self.active_share
        if active:
            recency = rng.randint(0, 20)
            eta = None
        else:
            recency = int((phase - self.active_share) * self.day_ticks)
            eta = self.day_ticks - (now % self.day_ticks)
        thermal = min(1.0, max(0.0, (0.55 if active else 0.3) + rng.uniform(-0.1, 0.1)))
        battery = rng.uniform(-0.2, 0.0) if active else rng.uniform(0.0, 0.3)
        storage = min(1.0, max(0.0, 0.4 + rng.uniform(-0.1, 0.1)))
        return HomeostasisVector(recency, thermal, battery, storage, eta)


@dataclass(frozen=True)
class SchedulerConfig:
    hot_budget_ticks: int = 50
    tick_seconds: float = 0.001
    idle_threshold: int = 30
    safety_margin: int = 15
    thermal_max: float = 0.8
    storage_max: float = 1.0
    battery_min: float = -0.5
    audit_every_k: int = 10
    max_deferral_cycles: int = 5
    default_estimate: int = 30
    estimate_factor: float = 1.5


@dataclass(frozen=True)
class Scheduled:
    start: int
    reason: str


@dataclass(frozen=True)
class Deferred:
    reason: str


def plan_window(h: HomeostasisVector, est_duration: int, config: SchedulerConfig = SchedulerConfig(),
                now: int = 0, last_run: int | None = None,
                ticks_per_cycle: int = 100) -> Scheduled | Deferred:
    """Start tick for the next window, or the reason it must wait.

    With a known session eta the window is back-scheduled so it finishes a
    safety margin before the user returns. Without one it starts once the
    user has been idle long enough. Thermal and storage limits hold in both
    cases. A window overdue by the starvation bound ignores idleness and
    battery.
    """
    if h.thermal >= config.thermal_max:
        return Deferred("thermal")
    if h.storage_pressure >= config.storage_max:
        return Deferred("storage-full")
    overdue = (last_run is not None
               and now - last_run >= config.max_deferral_cycles * ticks_per_cycle)
    if overdue:
        return Scheduled(now, "starvation-bound")
    if h.battery_trajectory < config.battery_min:
        return Deferred("battery")
    if h.next_session_eta is not None:
        start = now + h.next_session_eta - est_duration - config.safety_margin
        if start < now:
            return Deferred("insufficient-time")
        return Scheduled(start, "eta")
    if h.interaction_recency > config.idle_threshold:
        return Scheduled(now, "idle")
    return Deferred("user-active")


def conditions_hold(h: HomeostasisVector, config: SchedulerConfig) -> bool:
    return h.thermal < config.thermal_max and h.storage_pressure < config.storage_max


@dataclass
class HotResult:
    value: Any
    latency_ticks: float
    over_budget: bool


class HotLane:
    """Runs ingestion and reads inline; sleep-cycle work is refused."""

    def __init__(self, engine: Engine, config: SchedulerConfig = SchedulerConfig(),
                 clock: Callable[[], float] = time.perf_counter) -> None:
        self.engine = engine
        self.config = config
        self.clock = clock
        self.completed = 0
        self.exceeded = 0

    def submit(self, kind: str, *args: Any, **kw: Any) -> HotResult:
        if kind in SLEEP_KINDS:
            raise LaneError(f"{kind} is sleep-cycle work")
        if kind not in HOT_KINDS:
            raise LaneError(f"unknown hot-path task {kind!r}")
        # a full collection can stall for tens of ms on a large heap; let it
        # run between requests rather than inside one
        paused = gc.isenabled()
        if paused:
            gc.disable()
        try:
            t0 = self.clock()
            value = self.engine.read(*args, **kw) if kind == "read" else self.engine.ingest(*args, **kw)
            latency = (self.clock() - t0) / self.config.tick_seconds
        finally:
            if paused:
                gc.enable()
        over = latency > self.config.hot_budget_ticks
        self.completed += 1
        self.exceeded += over
        self.engine.events.emit("hot-complete", kind=kind, latency=round(latency, 3),
                                budget=self.config.hot_budget_ticks)
        return HotResult(value, latency, over)


@dataclass
class WindowReport:
    decision: Scheduled | Deferred
    ran: bool
    aborted: str | None = None
    results: list[RunResult] = field(default_factory=list)


class SleepScheduler:
    """Plans and runs maintenance windows one at a time."""

    def __init__(self, engine: Engine, provider: StateProvider,
                 config: SchedulerConfig = SchedulerConfig()) -> None:
        self.engine = engine
        self.provider = provider
        self.config = config
        self.durations: list[int] = []
        self.last_run: int | None = engine.now
        self.windows = 0
        self.aborts = 0
        self.deferrals = 0

    def estimate(self) -> int:
        if not self.durations:
            return self.config.default_estimate
        return int(round(self.config.estimate_factor * self.durations[-1]))

    def plan(self) -> Scheduled | Deferred:
        h = self.provider.sample(self.engine.now)
        return plan_window(h, self.estimate(), self.config, self.engine.now, self.last_run,
                           self.engine.config.ticks_per_cycle)

    def step(self) -> WindowReport:
        """Run a window if one is due now; otherwise report the deferral."""
        decision = self.plan()
        if isinstance(decision, Deferred) or decision.start > self.engine.now:
            self.deferrals += 1
            return WindowReport(decision, ran=False)
        eng = self.engine
        start = eng.now
        eng.abort_check = lambda op: not conditions_hold(self.provider.sample(eng.now), self.config)
        audit = (self.windows + 1) % self.config.audit_every_k == 0
        try:
            results = eng.run_window(audit=audit)
        except WindowAborted as exc:
            self.aborts += 1
            return WindowReport(decision, ran=False, aborted=str(exc))
        finally:
            eng.abort_check = None
        self.windows += 1
        self.last_run = eng.now
        self.durations.append(max(1, eng.now - start))
        return WindowReport(decision, ran=True, results=results)

    def status(self) -> dict[str, Any]:
        h = self.provider.sample(self.engine.now)
        decision = self.plan()
        out: dict[str, Any] = {
            "now": self.engine.now,
            "cycle": self.engine.cycle,
            "homeostasis": asdict(h),
            "estimate": self.estimate(),
            "windows": self.windows,
            "aborts": self.aborts,
            "deferrals": self.deferrals,
        }
        if isinstance(decision, Scheduled):
            out["next_window"] = {"start": decision.start, "reason": decision.reason}
        else:
            out["next_window"] = {"deferred": decision.reason}
        return out
