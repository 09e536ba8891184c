"""Line-oriented scenario files and their replay against a simulated world.

A scenario declares networks and devices, then lists steps, one per line::

    seed 7
    network home private
    device laptop home
    device phone home
    merge laptop phone
    assert resolve laptop "phone" == EID(phone)

``#`` starts a comment.  Tokens follow shell quoting rules.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass, field

from .actions import (
    ActionError,
    cancel_merge,
    complete_merge,
    create_group,
    find_binding,
    name_device,
    namespace_for,
    remove_binding,
    rename_binding,
    revoke_device,
)
from .names import NameSyntaxError, check_label, parse_name
from .replication import ingest
from .resolver import DeviceResult, ResolutionError, describe_result
from .routing import ChannelFailed, SearchNotFound, connect, ring_search
from .simnet import NETWORK_KINDS, SimError, SimWorld
from .view import cluster_of, dump_view, list_conflicts

ERROR_KINDS = ("NotFound", "Ambiguous", "TypeMismatch")
CHANNEL_MODES = ("Direct", "Relayed")


class ScenarioError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        self.message = message
        super().__init__(f"line {line}, column {column}: {message}")


@dataclass(frozen=True)
class NetworkDecl:
    name: str
    kind: str


@dataclass(frozen=True)
class DeviceDecl:
    name: str
    network: str
    default_name: str


@dataclass(frozen=True)
class Step:
    verb: str
    args: tuple[str, ...]
    line: int = field(default=0, compare=False)


@dataclass
class Scenario:
    seed: int = 0
    networks: list[NetworkDecl] = field(default_factory=list)
    devices: list[DeviceDecl] = field(default_factory=list)
    steps: list[Step] = field(default_factory=list)


# verb -> (min args, max args or None); argument meanings are checked in _validate
ARITY = {
    "merge": (2, 2),
    "merge-partial": (2, 2),
    "complete": (2, 2),
    "cancel": (1, 1),
    "link": (4, 4),
    "name": (3, 5),
    "rename": (3, 3),
    "remove": (2, 2),
    "revoke": (2, 2),
    "group": (2, None),
    "gossip": (0, None),
    "tick": (1, 1),
    "migrate": (2, 2),
    "partition": (1, None),
    "heal": (0, 0),
    "offline": (1, 1),
    "online": (1, 1),
    "search": (2, 2),
    "connect": (2, 2),
    "snapshot": (1, 1),
    "assert": (1, None),
}


def _tokens(text: str, lineno: int) -> list[tuple[str, int]]:
    """Shell-style tokens with 1-based columns."""
    try:
        lexer = shlex.shlex(text, posix=True, punctuation_chars=False)
        lexer.whitespace_split = True
        lexer.commenters = "#"
        words = list(lexer)
    except ValueError as exc:
        raise ScenarioError(lineno, 1, str(exc)) from None
    out, pos = [], 0
    for w in words:
        found = text.find(w, pos)
        if found < 0:
            found = text.find(w.split()[0] if w.split() else w, pos)
        col = found + 1 if found >= 0 else pos + 1
        pos = max(pos, found + len(w)) if found >= 0 else pos
        out.append((w, col))
    return out


def parse_scenario(text: str) -> Scenario:
    """Parse and validate; raises ScenarioError with a line and column."""
    sc = Scenario()
    cols: list[list[int]] = []
    seen_seed = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = _tokens(raw, lineno)
        if not toks:
            continue
        (verb, vcol), args = toks[0], toks[1:]
        words = [w for w, _ in args]
        if verb == "seed":
            if len(words) != 1 or not words[0].lstrip("-").isdigit():
                raise ScenarioError(lineno, vcol, "seed takes one integer")
            if seen_seed:
                raise ScenarioError(lineno, vcol, "seed given twice")
            sc.seed, seen_seed = int(words[0]), True
        elif verb == "network":
            if len(words) != 2 or words[1] not in NETWORK_KINDS:
                raise ScenarioError(lineno, vcol, f"usage: network NAME {{{'|'.join(NETWORK_KINDS)}}}")
            if any(n.name == words[0] for n in sc.networks):
                raise ScenarioError(lineno, args[0][1], f"network {words[0]!r} declared twice")
            sc.networks.append(NetworkDecl(words[0], words[1]))
        elif verb == "device":
            if len(words) not in (2, 3):
                raise ScenarioError(lineno, vcol, "usage: device NAME NETWORK [DEFAULT-NAME]")
            if any(d.name == words[0] for d in sc.devices):
                raise ScenarioError(lineno, args[0][1], f"device {words[0]!r} declared twice")
            if words[1] not in {n.name for n in sc.networks}:
                raise ScenarioError(lineno, args[1][1], f"undeclared network {words[1]!r}")
            default = words[2] if len(words) == 3 else words[0]
            _label(default, lineno, args[-1][1])
            sc.devices.append(DeviceDecl(words[0], words[1], default))
        elif verb in ARITY:
            lo, hi = ARITY[verb]
            if len(words) < lo or (hi is not None and len(words) > hi):
                raise ScenarioError(lineno, vcol, f"wrong number of arguments for {verb!r}")
            sc.steps.append(Step(verb, tuple(words), lineno))
            cols.append([c for _, c in args])
        else:
            raise ScenarioError(lineno, vcol, f"unknown verb {verb!r}")
    for step, c in zip(sc.steps, cols):
        _validate(sc, step, c)
    return sc


def _label(text: str, line: int, col: int) -> None:
    try:
        check_label(text)
    except NameSyntaxError as exc:
        raise ScenarioError(line, col, f"bad label {text!r}: {exc}") from None


def _validate(sc: Scenario, step: Step, cols: list[int]) -> None:
    devices = {d.name for d in sc.devices}
    networks = {n.name for n in sc.networks}
    a, line = step.args, step.line

    def dev(i):
        name = a[i]
        if name.startswith("EID(") and name.endswith(")"):
            name = name[4:-1]
        if name not in devices:
            raise ScenarioError(line, cols[i], f"undeclared device {name!r}")

    def net(i):
        if a[i] not in networks:
            raise ScenarioError(line, cols[i], f"undeclared network {a[i]!r}")

    def fail(i, msg):
        raise ScenarioError(line, cols[i] if i < len(cols) else 1, msg)

    v = step.verb
    if v in ("merge", "merge-partial", "complete"):
        dev(0)
        dev(1)
    elif v in ("cancel", "offline", "online"):
        dev(0)
    elif v == "link":
        dev(0)
        dev(2)
        _label(a[1], line, cols[1])
        _label(a[3], line, cols[3])
    elif v == "name":
        dev(0)
        _label(a[1], line, cols[1])
        dev(2)
        if len(a) > 3:
            if len(a) != 5 or a[3] != "under":
                fail(3, "usage: name DEVICE LABEL TARGET [under NAME]")
            _name(a[4], line, cols[4])
    elif v == "rename":
        dev(0)
        label, _, target = a[1].partition("@")
        _label(label, line, cols[1])
        if target and target not in devices:
            fail(1, f"undeclared device {target!r}")
        _label(a[2], line, cols[2])
    elif v == "remove":
        dev(0)
        label, _, target = a[1].partition("@")
        _label(label, line, cols[1])
        if target and target not in devices:
            fail(1, f"undeclared device {target!r}")
    elif v in ("revoke", "search", "connect"):
        dev(0)
        dev(1)
    elif v == "group":
        _label(a[0], line, cols[0])
        for i in range(1, len(a)):
            dev(i)
    elif v == "gossip":
        for i in range(len(a)):
            dev(i)
    elif v == "tick":
        if not a[0].isdigit():
            fail(0, "tick takes a non-negative integer")
    elif v == "migrate":
        dev(0)
        net(1)
    elif v == "partition":
        for i in range(len(a)):
            net(i)
    elif v == "assert":
        _validate_assert(step, cols, dev, fail)


def _name(text: str, line: int, col: int) -> None:
    try:
        parse_name(text)
    except NameSyntaxError as exc:
        raise ScenarioError(line, col, f"bad name {text!r}: {exc}") from None


def _validate_assert(step: Step, cols, dev, fail) -> None:
    a, kind = step.args, step.args[0]
    if kind == "resolve":
        if len(a) != 5 or a[3] not in ("==", "error"):
            fail(0, 'usage: assert resolve DEVICE "NAME" == DEVICE | error KIND')
        dev(1)
        _name(a[2], step.line, cols[2])
        if a[3] == "==":
            dev(4)
        elif a[4] not in ERROR_KINDS:
            fail(4, f"error kind must be one of {', '.join(ERROR_KINDS)}")
    elif kind == "conflicts":
        if len(a) != 4 or a[2] != "==" or not a[3].isdigit():
            fail(0, "usage: assert conflicts DEVICE == N")
        dev(1)
    elif kind == "same-cluster":
        if len(a) < 3:
            fail(0, "usage: assert same-cluster DEVICE DEVICE ...")
        for i in range(1, len(a)):
            dev(i)
    elif kind == "path":
        if len(a) != 5 or a[3] != "<=" or not a[4].isdigit():
            fail(0, "usage: assert path DEVICE TARGET <= N")
        dev(1)
        dev(2)
    elif kind == "channel":
        if len(a) not in (5, 7) or a[3] != "==" or a[4] not in CHANNEL_MODES:
            fail(0, "usage: assert channel DEVICE TARGET == Direct|Relayed [via DEVICE]")
        dev(1)
        dev(2)
        if len(a) == 7:
            if a[5] != "via":
                fail(5, "expected 'via'")
            dev(6)
    elif kind == "unchanged":
        if len(a) < 3:
            fail(0, "usage: assert unchanged SNAPSHOT DEVICE ...")
        for i in range(2, len(a)):
            dev(i)
    else:
        fail(0, f"unknown assertion {kind!r}")


def render_scenario(sc: Scenario) -> str:
    lines = [f"seed {sc.seed}"]
    lines += [f"network {n.name} {n.kind}" for n in sc.networks]
    lines += [f"device {d.name} {d.network} {d.default_name}" for d in sc.devices]
    lines += [" ".join([s.verb] + [shlex.quote(x) for x in s.args]) for s in sc.steps]
    return "\n".join(lines) + "\n"


# -- replay ----------------------------------------------------------------------

@dataclass
class Outcome:
    line: int
    text: str
    passed: bool
    evidence: str
    kind: str = "assert"

    def to_dict(self) -> dict:
        return {"line": self.line, "kind": self.kind, "step": self.text, "passed": self.passed, "evidence": self.evidence}


@dataclass
class Report:
    outcomes: list[Outcome] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(o.passed for o in self.outcomes)

    @property
    def failures(self) -> list[Outcome]:
        return [o for o in self.outcomes if not o.passed]

    def render(self) -> str:
        out = []
        for o in self.outcomes:
            tag = "info" if o.kind == "info" else ("PASS" if o.passed else "FAIL")
            out.append(f"{tag} line {o.line}: {o.text} -- {o.evidence}")
        n = sum(1 for o in self.outcomes if o.kind == "assert")
        bad = len(self.failures)
        out.append(f"{n - sum(1 for o in self.failures if o.kind == 'assert')}/{n} assertions passed, {bad} failure(s)")
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict:
        return {"ok": self.ok, "outcomes": [o.to_dict() for o in self.outcomes]}


def step_text(step: Step) -> str:
    return " ".join([step.verb] + [shlex.quote(x) for x in step.args])


class Runner:
    """Applies scenario steps to one world, keeping snapshots for assertions."""

    def __init__(self, sc: Scenario, seed: int | None = None):
        self.scenario = sc
        self.world = SimWorld(sc.seed if seed is None else seed)
        self.snapshots: dict[str, dict[str, str]] = {}
        for n in sc.networks:
            self.world.add_network(n.name, n.kind)
        for d in sc.devices:
            self.world.add_device(d.name, d.network, d.default_name)
        self.names = {node.eid: name for name, node in self.world.nodes.items()}

    def device(self, name: str):
        if name.startswith("EID(") and name.endswith(")"):
            name = name[4:-1]
        return self.world.node(name).device

    def run(self, report: Report | None = None) -> Report:
        report = report or Report()
        for step in self.scenario.steps:
            self.apply(step, report)
        return report

    def apply(self, step: Step, report: Report) -> None:
        text = step_text(step)
        try:
            if step.verb == "assert":
                passed, evidence = self._check(step.args)
                report.outcomes.append(Outcome(step.line, text, passed, evidence))
            else:
                info = self._act(step.verb, step.args)
                if info is not None:
                    report.outcomes.append(Outcome(step.line, text, True, info, kind="info"))
        except (ActionError, SimError, ResolutionError, NameSyntaxError, ChannelFailed, SearchNotFound) as exc:
            report.outcomes.append(Outcome(step.line, text, False, f"{type(exc).__name__}: {exc}", kind="step"))

    def _binding(self, dev, spec: str):
        label, _, target = spec.partition("@")
        want = self.device(target).eid if target else None
        found = find_binding(dev, label, want)
        if not found:
            raise ActionError(f"no active binding {spec!r}")
        if len({b.source for b in found}) > 1:
            raise ActionError(f"{spec!r} matches several bindings; add @DEVICE")
        return found[0]

    def _act(self, verb: str, a: tuple[str, ...]) -> str | None:
        w = self.world
        if verb in ("merge", "merge-partial"):
            w.merge(a[0], a[1], interrupt=verb == "merge-partial")
        elif verb == "complete":
            d, other = self.device(a[0]), self.device(a[1])
            pending = sorted(p for p in other.pending_merges if p.author == other.eid)
            if not pending:
                raise ActionError(f"{a[1]} has no pending merge")
            w.introduce(w.node(a[0]), w.node(a[1]))
            for p in pending:
                ingest(d.store, other.log(), {other.eid: other.identity.public_key})
                rec = complete_merge(d, p)
                ingest(other.store, d.log(), {d.eid: d.identity.public_key})
                other.pending_merges.discard(p)
                w.note("complete", w.node(a[0]), w.node(a[1]), f"seq={rec.seq}")
        elif verb == "cancel":
            d = self.device(a[0])
            for p in sorted(d.pending_merges):
                cancel_merge(d, p)
            w.note("cancel", w.node(a[0]), None, "")
        elif verb == "link":
            w.link(a[0], a[1], a[2], a[3])
        elif verb == "name":
            d = self.device(a[0])
            parent = namespace_for(d, a[4]) if len(a) == 5 else d.root
            rec = name_device(d, parent, a[1], self.device(a[2]).eid)
            w.note("name", w.node(a[0]), w.node(a[2]), f"{a[1]} seq={rec.seq}")
        elif verb == "rename":
            d = self.device(a[0])
            b = self._binding(d, a[1])
            named, _ = rename_binding(d, b.source, a[2])
            w.note("rename", w.node(a[0]), None, f"{a[1]}->{a[2]} seq={named.seq}")
        elif verb == "remove":
            d = self.device(a[0])
            rec = remove_binding(d, self._binding(d, a[1]).source)
            w.note("remove", w.node(a[0]), None, f"{a[1]} seq={rec.seq}")
        elif verb == "revoke":
            d = self.device(a[0])
            stop, removes = revoke_device(d, self.device(a[1]).eid)
            w.note("revoke", w.node(a[0]), w.node(a[1]), f"cut={stop.body.stop_seq} removes={len(removes)}")
        elif verb == "group":
            nodes = [w.node(n) for n in a[1:]]
            for other in nodes[1:]:
                w.introduce(nodes[0], other)
            create_group([n.device for n in nodes], a[0])
            w.note("group", nodes[0], None, f"{a[0]} n={len(nodes)}")
        elif verb == "gossip":
            passes = w.gossip(list(a) or None)
            return f"{passes} pass(es)"
        elif verb == "tick":
            w.advance(int(a[0]))
        elif verb == "migrate":
            w.migrate(a[0], a[1])
        elif verb == "partition":
            w.partition(a)
        elif verb == "heal":
            w.heal()
        elif verb in ("offline", "online"):
            w.set_online(a[0], verb == "online")
        elif verb == "search":
            result = ring_search(w, w.node(a[0]), self.device(a[1]).eid)
            return "path " + " ".join(self.names.get(e, e.short()) for e in result.path)
        elif verb == "connect":
            ch = connect(w, w.node(a[0]), self.device(a[1]).eid)
            return self._channel_text(ch)
        elif verb == "snapshot":
            self.snapshots[a[0]] = {n: dump_view(node.device.view(), self.names) for n, node in w.nodes.items()}
        else:
            raise ActionError(f"unknown verb {verb!r}")
        return None

    def _channel_text(self, ch) -> str:
        if ch.relay is None:
            return ch.mode
        return f"{ch.mode} via {self.names.get(ch.relay, ch.relay.short())}"

    def _check(self, a: tuple[str, ...]) -> tuple[bool, str]:
        kind = a[0]
        if kind == "resolve":
            d = self.device(a[1])
            try:
                result = d.resolve(a[2])
                got, text = result, describe_result(result, self.names)
            except ResolutionError as exc:
                got, text = exc.kind, f"error {exc.kind}"
            if a[3] == "==":
                want = self.device(a[4]).eid
                return isinstance(got, DeviceResult) and got.eid == want, text
            return got == a[4], text
        if kind == "conflicts":
            n = len(list_conflicts(self.device(a[1]).view()))
            return n == int(a[3]), f"{n} conflict(s)"
        if kind == "same-cluster":
            devs = [self.device(x) for x in a[1:]]
            bad = []
            for d in devs:
                view = d.view()
                try:
                    classes = {cluster_of(view, x.eid) for x in devs}
                except LookupError:
                    classes = {None, "unknown"}
                if len(classes) != 1:
                    bad.append(self.names[d.eid])
            return not bad, "same cluster on all" if not bad else "split on " + ",".join(bad)
        if kind == "path":
            try:
                result = ring_search(self.world, self.world.node(a[1]), self.device(a[2]).eid)
            except SearchNotFound:
                return False, "not found"
            return result.length <= int(a[4]), f"{result.length} hop(s)"
        if kind == "channel":
            try:
                ch = connect(self.world, self.world.node(a[1]), self.device(a[2]).eid)
            except ChannelFailed as exc:
                return False, f"ChannelFailed {exc}"
            ok = ch.mode == a[4]
            if len(a) == 7:
                ok = ok and ch.relay == self.device(a[6]).eid
            return ok, self._channel_text(ch)
        if kind == "unchanged":
            snap = self.snapshots.get(a[1])
            if snap is None:
                return False, f"no snapshot {a[1]!r}"
            changed = [n for n in a[2:] if dump_view(self.device(n).view(), self.names) != snap[n]]
            return not changed, "views unchanged" if not changed else "changed on " + ",".join(changed)
        return False, f"unknown assertion {kind!r}"


def run_scenario(sc: Scenario, seed: int | None = None) -> tuple[Report, SimWorld]:
    runner = Runner(sc, seed)
    return runner.run(), runner.world


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
