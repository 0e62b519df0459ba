"""TOML configuration: engine tunables, scheduler knobs and drift runs."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .audit import AuditParams
from .consolidate import ConsolidationParams
from .decay import DecayConfig, VitalityWeights
from .engine import EngineConfig
from .gravity import GravityParams
from .scheduler import SchedulerConfig
from .sim import DriftConfig
from .triage import TriageConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    engine: EngineConfig = EngineConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    drift: DriftConfig = field(default_factory=DriftConfig)


def _apply(obj: Any, values: Mapping[str, Any], section: str) -> Any:
    names = {f.name for f in fields(obj)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    converted: dict[str, Any] = {}
    for key, value in values.items():
        current = getattr(obj, key)
        if is_dataclass(current) and isinstance(value, Mapping):
            converted[key] = _apply(current, value, f"{section}.{key}")
        elif isinstance(value, list):
            converted[key] = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        else:
            converted[key] = value
    try:
        return replace(obj, **converted)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def settings_from_mapping(data: Mapping[str, Any]) -> Settings:
    data = dict(data)
    engine = EngineConfig()
    if "triage" in data:
        engine = replace(engine, triage=_apply(TriageConfig(), data.pop("triage"), "triage"))
    if "gravity" in data:
        engine = replace(engine, gravity=_apply(GravityParams(), data.pop("gravity"), "gravity"))
    if "decay" in data:
        dec = dict(data.pop("decay"))
        weights = dict(dec.pop("weights", {}))
        if "threshold" in dec:
            weights["vitality_threshold"] = dec.pop("threshold")
        decay = _apply(DecayConfig(), dec, "decay")
        decay = replace(decay, weights=_apply(VitalityWeights(), weights, "decay.weights"))
        engine = replace(engine, decay=decay)
    if "consolidate" in data:
        engine = replace(engine, consolidation=_apply(ConsolidationParams(), data.pop("consolidate"),
                                                      "consolidate"))
    if "audit" in data:
        engine = replace(engine, audit=_apply(AuditParams(), data.pop("audit"), "audit"))
    if "engine" in data:
        engine = _apply(engine, data.pop("engine"), "engine")
    scheduler = SchedulerConfig()
    if "scheduler" in data:
        scheduler = _apply(scheduler, data.pop("scheduler"), "scheduler")
        engine = replace(engine, audit=replace(engine.audit, every_k=scheduler.audit_every_k))
    drift_values = data.pop("drift", {})
    # remaining top-level keys are drift keys too, for flat sim configs
    drift_values = {**data, **drift_values}
    try:
        drift = DriftConfig.from_mapping(drift_values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[drift] {exc}") from exc
    return Settings(engine, scheduler, drift)


def load_settings(path: str | Path | None) -> Settings:
    if path is None:
        return Settings()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return settings_from_mapping(data)
