"""Command-line interface.

Results go to stdout as JSON (CSV for ``gravity report``, raw bytes for
``cold fetch``); diagnostics go to stderr. Exit codes: 0 success,
1 operational error, 2 conformance violation, 64 usage error.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

from . import codec
from .config import ConfigError, Settings, load_settings
from .conformance import MalformedTrace, run_trace
from .engine import Engine, RunResult
from .events import EventLog
from .model import MemgovError, OriginChannel
from .scheduler import SimulatedProvider, SleepScheduler
from .sim import dumps_report, run_report
from .store import StaleSnapshot, Store
from .triage import Accepted

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _out(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _open_engine(args: argparse.Namespace, settings: Settings) -> Engine:
    root = Path(args.root)
    root.mkdir(parents=True, exist_ok=True)
    holder: dict[str, Engine] = {}
    events = EventLog(lambda: holder["engine"].now if "engine" in holder else 0,
                      path=root / "events.jsonl")
    engine = Engine(Store(root, events=events), settings.engine, events=events)
    holder["engine"] = engine
    # keep task names unique across invocations sharing one event log
    engine._runs = itertools.count(len(events.events) + 1)
    if args.at is not None:
        if args.at < engine.now:
            raise UsageError(f"--at {args.at} is behind the store clock ({engine.now})")
        engine.now = args.at
    return engine


def _result(r: RunResult) -> dict[str, Any]:
    out: dict[str, Any] = {"op": r.op, "commit": r.commit_id, "snapshot": r.snapshot.to_dict()}
    for name in ("report", "actions", "rows"):
        detail = getattr(r.plan, name, None)
        if detail:
            out[name] = codec.encode(detail)
    return out


def cmd_ingest(args: argparse.Namespace, settings: Settings) -> int:
    hints = []
    for h in args.hint:
        target, _, kind = h.partition(":")
        if not kind:
            raise UsageError(f"hint {h!r} must look like ID:KIND")
        hints.append((target, kind))
    raw = Path(args.file).read_bytes() if args.file and args.file != "-" else sys.stdin.buffer.read()
    engine = _open_engine(args, settings)
    got = engine.ingest(raw, args.channel, hints=hints, locator=args.locator or "",
                        safety_flag=args.safety, priority=args.priority)
    if isinstance(got, Accepted):
        _out({"status": "accepted", "id": got.entry.id})
    else:
        _out({"status": "rejected", "reason": got.reason, "id": got.id})
    return EXIT_OK


def _cmd_op(op: str):
    def run(args: argparse.Namespace, settings: Settings) -> int:
        engine = _open_engine(args, settings)
        if args.snapshot is not None:
            head = engine.store.take_snapshot().commit_id
            if head != args.snapshot:
                raise StaleSnapshot(f"HEAD is {head}, not {args.snapshot}")
        _out(_result(getattr(engine, op)()))
        return EXIT_OK
    return run


def cmd_window(args: argparse.Namespace, settings: Settings) -> int:
    engine = _open_engine(args, settings)
    for _ in range(args.cycles):
        engine.advance(engine.config.ticks_per_cycle)
        for r in engine.run_window(audit=True if args.audit else None):
            _out(_result(r))
    return EXIT_OK


def cmd_gravity(args: argparse.Namespace, settings: Settings) -> int:
    engine = _open_engine(args, settings)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["id", "centrality", "fragmentation", "g_base", "g_eff", "protected"])
    for row in sorted(engine.gravity().values(), key=lambda r: (-r.g_eff, r.id)):
        writer.writerow([row.id, f"{row.centrality:.6f}", row.fragmentation, f"{row.g_base:.6f}",
                         f"{row.g_eff:.6f}", int(row.protected)])
    return EXIT_OK


def cmd_cold(args: argparse.Namespace, settings: Settings) -> int:
    engine = _open_engine(args, settings)
    try:
        data = engine.cold_fetch(args.id)
    except KeyError:
        print(f"no cold object {args.id}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.buffer.write(data)
    sys.stdout.flush()
    return EXIT_OK


def cmd_schedule(args: argparse.Namespace, settings: Settings) -> int:
    engine = _open_engine(args, settings)
    sched = SleepScheduler(engine, SimulatedProvider(args.seed), settings.scheduler)
    _out(sched.status())
    return EXIT_OK


def cmd_sim(args: argparse.Namespace, settings: Settings) -> int:
    text = dumps_report(run_report(settings.drift))
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_conformance(args: argparse.Namespace, settings: Settings) -> int:
    try:
        violations = run_trace(args.trace)
    except MalformedTrace as exc:
        print(f"malformed trace: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for v in violations:
        _out(asdict(v))
    if violations:
        print(f"{len(violations)} violation(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace, settings: Settings) -> int:
    engine = _open_engine(args, settings)
    try:
        _out(engine.inspect(args.id))
    except KeyError:
        print(f"unknown id {args.id}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="memgov", description="Governed long-term memory store.")
    p.add_argument("--root", default=os.environ.get("MEMGOV_ROOT", ".memgov"),
                   help="store directory (default: $MEMGOV_ROOT or ./.memgov)")
    p.add_argument("--config", help="TOML settings file")
    p.add_argument("--at", type=int, help="move the virtual clock forward to this tick first")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    ing = sub.add_parser("ingest", help="triage one claim file into the buffer")
    ing.add_argument("--channel", default=OriginChannel.CONVERSATION.value,
                     choices=[c.value for c in OriginChannel])
    ing.add_argument("--file", help="claim JSONL file (default: stdin)")
    ing.add_argument("--hint", action="append", default=[], metavar="ID:KIND",
                     help="link hint to an existing wiki entry (repeatable)")
    ing.add_argument("--locator", help="origin locator for document/external content")
    ing.add_argument("--priority", type=float)
    ing.add_argument("--safety", action="store_true", help="set the safety flag")
    ing.set_defaults(func=cmd_ingest)

    for op in ("contextualize", "consolidate", "decay", "audit"):
        sp = sub.add_parser(op, help=f"{op} operations")
        spsub = sp.add_subparsers(dest="action", required=True, parser_class=_Parser)
        run = spsub.add_parser("run", help=f"run one {op} pass and commit it")
        run.add_argument("--snapshot", metavar="COMMIT",
                         help="refuse to run unless HEAD is this commit id")
        run.set_defaults(func=_cmd_op(op))

    win = sub.add_parser("window", help="maintenance windows")
    winsub = win.add_subparsers(dest="action", required=True, parser_class=_Parser)
    wr = winsub.add_parser("run", help="advance one cycle and run a full window")
    wr.add_argument("--cycles", type=int, default=1)
    wr.add_argument("--audit", action="store_true", help="force an audit pass")
    wr.set_defaults(func=cmd_window)

    grav = sub.add_parser("gravity", help="structural gravity")
    gsub = grav.add_subparsers(dest="action", required=True, parser_class=_Parser)
    gsub.add_parser("report", help="CSV of gravity per live entry").set_defaults(func=cmd_gravity)

    cold = sub.add_parser("cold", help="cold storage")
    csub = cold.add_subparsers(dest="action", required=True, parser_class=_Parser)
    cf = csub.add_parser("fetch", help="write a cold object's original bytes to stdout")
    cf.add_argument("id")
    cf.set_defaults(func=cmd_cold)

    sch = sub.add_parser("schedule", help="sleep-lane scheduling")
    ssub = sch.add_subparsers(dest="action", required=True, parser_class=_Parser)
    st = ssub.add_parser("status", help="next window decision under a simulated device")
    st.add_argument("--seed", type=int, default=0)
    st.set_defaults(func=cmd_schedule)

    sim = sub.add_parser("sim", help="drift simulator")
    simsub = sim.add_subparsers(dest="action", required=True, parser_class=_Parser)
    sr = simsub.add_parser("run", help="run a drift simulation and print its report")
    sr.add_argument("--output", help="write the report here instead of stdout")
    sr.set_defaults(func=cmd_sim)

    conf = sub.add_parser("conformance", help="trace checking")
    confsub = conf.add_subparsers(dest="action", required=True, parser_class=_Parser)
    cr = confsub.add_parser("run", help="check a JSONL trace; exit 2 on violations")
    cr.add_argument("trace")
    cr.set_defaults(func=cmd_conformance)

    ins = sub.add_parser("inspect", help="show any record by id")
    ins.add_argument("id")
    ins.set_defaults(func=cmd_inspect)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_settings(args.config)
        return args.func(args, settings)
    except (UsageError, ConfigError) as exc:
        print(f"memgov: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MemgovError, OSError, ValueError) as exc:
        print(f"memgov: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
