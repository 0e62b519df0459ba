"""memgov: a governed long-term memory store with sleep-cycle maintenance."""

from .engine import Engine, EngineConfig, RunResult, WindowAborted
from .model import ClaimTuple, MemgovError, OriginChannel
from .store import Snapshot, Store

__all__ = ["ClaimTuple", "Engine", "EngineConfig", "MemgovError", "OriginChannel", "RunResult",
           "Snapshot", "Store", "WindowAborted"]
__version__ = "0.1.0"
