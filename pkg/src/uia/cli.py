"""Command-line front end.

Mutating verbs append one scenario line to a session file and replay the
whole session, so the world is always rebuilt from the file alone.  Query
verbs replay the session and then report.  ``run`` replays a scenario file.
"""

from __future__ import annotations

import argparse
import json
import os
import shlex
import sys
from pathlib import Path

from .records import dump_archive
from .resolver import ResolutionError, describe_result
from .routing import ChannelFailed, SearchNotFound, connect, ring_search
from .scenario import (
    Report,
    Runner,
    ScenarioError,
    load_scenario,
    parse_scenario,
    run_scenario,
)
from .simnet import NETWORK_KINDS
from .view import describe_conflict, dump_view, list_conflicts

DEFAULT_SESSION = "uia-session.uia"

# verb -> argument names, in scenario order
STEP_VERBS = {
    "merge": ["a", "b"],
    "merge-partial": ["a", "b"],
    "link": ["a", "name_for_b", "b", "name_for_a"],
    "name": ["device", "label", "target"],
    "rename": ["device", "binding", "new_label"],
    "remove": ["device", "binding"],
    "revoke": ["device", "target"],
    "migrate": ["device", "network"],
    "tick": ["ticks"],
    "heal": [],
}

HELP = {
    "init": "declare a device (and its network) in the session",
    "merge": "merge two devices on the same network",
    "merge-partial": "start a merge that is interrupted after the first record",
    "link": "link two users: link A NAME-FOR-B B NAME-FOR-A",
    "name": "bind LABEL to TARGET's EID in DEVICE's root namespace",
    "rename": "rename binding LABEL[@TARGET] to NEW-LABEL",
    "remove": "remove binding LABEL[@TARGET]",
    "revoke": "stop-merge TARGET from DEVICE's cluster",
    "group": "create a group namespace over several devices",
    "gossip": "run gossip until stores stop changing",
    "migrate": "move a device to another network",
    "partition": "cut the given networks off from the rest",
    "heal": "remove all partitions",
    "tick": "advance simulated time",
    "resolve": "resolve a name on a device",
    "conflicts": "list conflicts seen by a device",
    "search": "ring-search for a device",
    "connect": "open a channel to a device",
    "dump-view": "print a device's namespace view",
    "dump-log": "print (or archive) a device's log",
    "run": "replay a scenario file",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uia", description="User-relative device naming over a simulated network.")
    p.add_argument("--seed", type=int, default=None, help="world seed (default: from the session or scenario)")
    p.add_argument("--trace", metavar="FILE", help="write the simulator trace to FILE")
    p.add_argument("--format", choices=("text", "structured"), default="text")
    p.add_argument("--session", default=os.environ.get("UIA_SESSION", DEFAULT_SESSION), help="session file")
    sub = p.add_subparsers(dest="verb", required=True)

    def add(name):
        return sub.add_parser(name, help=HELP[name])

    s = add("init")
    s.add_argument("device")
    s.add_argument("--network", default="lan")
    s.add_argument("--kind", choices=NETWORK_KINDS, default="public")
    s.add_argument("--name", dest="default_name", help="the device's name for itself")
    for verb, names in STEP_VERBS.items():
        s = add(verb)
        for n in names:
            s.add_argument(n)
    add("group").add_argument("args", nargs="+", metavar="LABEL DEVICE")
    add("gossip").add_argument("devices", nargs="*")
    add("partition").add_argument("networks", nargs="+")
    s = add("resolve")
    s.add_argument("device")
    s.add_argument("name")
    add("conflicts").add_argument("device")
    for verb in ("search", "connect"):
        s = add(verb)
        s.add_argument("device")
        s.add_argument("target")
    add("dump-view").add_argument("device")
    s = add("dump-log")
    s.add_argument("device")
    s.add_argument("--archive", metavar="FILE", help="write the binary log archive to FILE")
    s = add("run")
    s.add_argument("scenario")
    return p


class Session:
    def __init__(self, path: Path):
        self.path = path

    def text(self) -> str:
        return self.path.read_text(encoding="utf-8") if self.path.exists() else ""

    def write(self, text: str) -> None:
        self.path.write_text(text, encoding="utf-8")


def _emit(args, doc: dict, text: str) -> None:
    if args.format == "structured":
        print(json.dumps(doc, sort_keys=True))
    else:
        print(text, end="" if text.endswith("\n") else "\n")


def _write_trace(args, world) -> None:
    if args.trace:
        Path(args.trace).write_text(world.trace_text(), encoding="utf-8")


def _replay(args, text: str) -> tuple[Runner, Report]:
    sc = parse_scenario(text)
    runner = Runner(sc, args.seed)
    return runner, runner.run()


def _step_line(args) -> str:
    if args.verb == "group":
        words = args.args
    elif args.verb == "gossip":
        words = args.devices
    elif args.verb == "partition":
        words = args.networks
    else:
        words = [getattr(args, n) for n in STEP_VERBS[args.verb]]
    return " ".join([args.verb] + [shlex.quote(w) for w in words])


def _init(args, session: Session) -> int:
    text = session.text()
    lines = text.splitlines()
    if not any(line.split()[:1] == ["seed"] for line in lines):
        lines.insert(0, f"seed {args.seed or 0}")
    sc = parse_scenario("\n".join(lines)) if lines else None
    if sc is None or all(n.name != args.network for n in sc.networks):
        decl = f"network {args.network} {args.kind}"
        last = max((i for i, line in enumerate(lines) if line.startswith(("seed", "network"))), default=0)
        lines.insert(last + 1, decl)
    dev = f"device {args.device} {args.network}" + (f" {args.default_name}" if args.default_name else "")
    last = max((i for i, line in enumerate(lines) if line.startswith(("seed", "network", "device"))), default=0)
    lines.insert(last + 1, dev)
    new = "\n".join(lines) + "\n"
    runner, _ = _replay(args, new)
    session.write(new)
    node = runner.world.node(args.device)
    _emit(args, {"device": args.device, "eid": node.eid.hex(), "address": node.address},
          f"{args.device} {node.eid.hex()} at {node.address}")
    _write_trace(args, runner.world)
    return 0


def _mutate(args, session: Session) -> int:
    new = session.text() + _step_line(args) + "\n"
    runner, report = _replay(args, new)
    last = report.outcomes[-1] if report.outcomes else None
    if last is not None and last.kind == "step" and not last.passed:
        _emit(args, {"ok": False, "error": last.evidence}, f"error: {last.evidence}")
        return 1
    session.write(new)
    detail = last.evidence if last is not None and last.line == len(new.splitlines()) else "ok"
    _emit(args, {"ok": True, "detail": detail}, detail)
    _write_trace(args, runner.world)
    return 0


def _query(args, session: Session) -> int:
    runner, _ = _replay(args, session.text())
    world = runner.world
    names = runner.names
    dev = runner.device(args.device)
    status = 0
    if args.verb == "resolve":
        try:
            result = dev.resolve(args.name)
            text = describe_result(result, names)
            doc = {"name": args.name, "result": text}
        except ResolutionError as exc:
            text, doc, status = f"error {exc.kind}", {"name": args.name, "error": exc.kind}, 1
    elif args.verb == "conflicts":
        found = list_conflicts(dev.view())
        lines = [describe_conflict(c, names) for c in found]
        text = "\n".join(lines) if lines else "no conflicts"
        doc = {"conflicts": lines}
    elif args.verb == "search":
        try:
            res = ring_search(world, world.node(args.device), runner.device(args.target).eid)
            path = [names.get(e, e.hex()) for e in res.path]
            text, doc = "path " + " ".join(path), {"path": path, "address": res.address}
        except SearchNotFound:
            text, doc, status = "not found", {"error": "NotFound"}, 1
    elif args.verb == "connect":
        try:
            ch = connect(world, world.node(args.device), runner.device(args.target).eid)
            relay = names.get(ch.relay) if ch.relay else None
            text = ch.mode + (f" via {relay}" if relay else "")
            doc = {"mode": ch.mode, "relay": relay}
        except ChannelFailed:
            text, doc, status = "channel failed", {"error": "ChannelFailed"}, 1
    elif args.verb == "dump-view":
        text = dump_view(dev.view(), names)
        doc = {"view": text.splitlines()}
    else:
        recs = dev.log()
        lines = [f"{r.seq} {type(r.body).__name__} {r.hash.hex()[:16]}" for r in recs]
        if args.archive:
            Path(args.archive).write_bytes(dump_archive(dev.store.logs[dev.eid], dev.identity.public_key))
        text, doc = "\n".join(lines), {"records": lines}
    _emit(args, doc, text)
    _write_trace(args, world)
    return status


def _run(args) -> int:
    sc = load_scenario(args.scenario)
    report, world = run_scenario(sc, args.seed)
    _emit(args, report.to_dict(), report.render())
    _write_trace(args, world)
    return 0 if report.ok else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    session = Session(Path(args.session))
    try:
        if args.verb == "run":
            return _run(args)
        if args.verb == "init":
            return _init(args, session)
        if args.verb in ("resolve", "conflicts", "search", "connect", "dump-view", "dump-log"):
            return _query(args, session)
        return _mutate(args, session)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
