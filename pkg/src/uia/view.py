"""Derive a device's logical namespace from the records it holds.

The view is recomputed from scratch and depends only on the set of records
in the store (plus locally cancelled merges, which never leave the device).
Evaluation runs in passes:

1. cuts: forks and honoured stop-merge records fix, per author, the last
   sequence number that still counts;
2. visibility: everything at or below an author's cut;
3. classes: create-namespace records joined by reciprocal merge pairs;
4. bindings: link and name-device records, switched off by tombstones;
5. conflicts.

Write authority is per class: a device may add or remove bindings in a class
only if one of the class members is a namespace it created itself.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .identity import EID
from .records import (
    CreateNamespace,
    Link,
    Merge,
    NameDevice,
    Record,
    RecordPointer,
    RemoveName,
    StopMerge,
    Unlink,
)
from .names import normalize_label

INFINITE = float("inf")


class UnionFind:
    def __init__(self, items: Iterable = ()):
        self._parent: dict = {}
        for item in items:
            self.add(item)

    def add(self, x) -> None:
        self._parent.setdefault(x, x)

    def find(self, x):
        root = x
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[x] != root:
            self._parent[x], x = root, self._parent[x]
        return root

    def union(self, x, y) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            # smaller root wins so the structure is independent of call order
            if ry < rx:
                rx, ry = ry, rx
            self._parent[ry] = rx

    def groups(self) -> list[list]:
        out = defaultdict(list)
        for item in self._parent:
            out[self.find(item)].append(item)
        return list(out.values())


@dataclass(frozen=True)
class NamespaceClass:
    members: frozenset[RecordPointer]

    @property
    def representative(self) -> RecordPointer:
        return min(self.members)

    def authors(self) -> frozenset[EID]:
        return frozenset(p.author for p in self.members)

    def sort_key(self) -> bytes:
        return self.representative.encode()

    def __repr__(self) -> str:
        return f"NamespaceClass({self.representative!r}, {len(self.members)} members)"


Target = Union[EID, NamespaceClass]


def target_key(target: Target) -> tuple[int, bytes]:
    if isinstance(target, NamespaceClass):
        return (1, target.sort_key())
    return (0, bytes(target))


@dataclass(frozen=True)
class Binding:
    label: str  # normalized
    text: str  # as written in the record
    source: RecordPointer
    target: Target
    active: bool


@dataclass(frozen=True)
class NameConflict:
    cls: NamespaceClass
    label: str
    targets: frozenset

    kind = "NameConflict"


@dataclass(frozen=True)
class UnpairedMerge:
    merge: RecordPointer
    cls: NamespaceClass | None

    kind = "UnpairedMerge"


@dataclass(frozen=True)
class ForkDetected:
    author: EID
    seq: int

    kind = "ForkDetected"


Conflict = Union[NameConflict, UnpairedMerge, ForkDetected]


@dataclass(frozen=True)
class Anomaly:
    """A record that was ignored, with the reason."""

    kind: str
    record: RecordPointer


def _conflict_key(c: Conflict) -> tuple:
    if isinstance(c, NameConflict):
        return (c.cls.sort_key(), c.label, c.kind, b"")
    if isinstance(c, UnpairedMerge):
        return (c.cls.sort_key() if c.cls else b"", "", c.kind, c.merge.encode())
    return (b"", "", c.kind, bytes(c.author) + c.seq.to_bytes(8, "big"))


class UnknownDevice(LookupError):
    pass


@dataclass
class NamespaceView:
    classes: tuple[NamespaceClass, ...]
    bindings: dict[tuple[NamespaceClass, str], frozenset[Binding]]
    conflicts: tuple[Conflict, ...]
    cuts: dict[EID, int]
    roots: dict[EID, RecordPointer]
    anomalies: tuple[Anomaly, ...] = ()
    all_bindings: tuple[Binding, ...] = ()
    class_index: dict[RecordPointer, NamespaceClass] = field(default_factory=dict, compare=False, repr=False)

    def class_of(self, pointer: RecordPointer) -> NamespaceClass | None:
        return self.class_index.get(pointer)

    def lookup(self, cls: NamespaceClass, label: str) -> frozenset[Binding]:
        return self.bindings.get((cls, normalize_label(label)), frozenset())

    def visible_seq(self, author: EID) -> float:
        return self.cuts.get(author, INFINITE)


# -- helpers over raw logs ------------------------------------------------------

def _visible(logs: Mapping[EID, list[Record]], cuts: Mapping[EID, int]) -> dict[RecordPointer, Record]:
    out = {}
    for author, log in logs.items():
        limit = cuts.get(author)
        recs = log if limit is None else log[: limit + 1]
        for rec in recs:
            out[rec.pointer] = rec
    return out


def _is_namespace(index: Mapping[RecordPointer, Record], ptr: RecordPointer) -> bool:
    rec = index.get(ptr)
    return rec is not None and isinstance(rec.body, CreateNamespace)


def _merge_pairs(index: Mapping[RecordPointer, Record], suppressed: frozenset) -> tuple[list, list]:
    """Return (paired merges, unpaired merges) among well-formed visible merges."""
    merges = {}
    for ptr, rec in index.items():
        if not isinstance(rec.body, Merge) or ptr in suppressed:
            continue
        body = rec.body
        if body.local.author != rec.author or not _is_namespace(index, body.local):
            continue
        merges[ptr] = rec
    by_ends = {(r.body.local, r.body.remote): p for p, r in merges.items()}
    paired, unpaired = [], []
    for ptr in sorted(merges):
        body = merges[ptr].body
        if (body.remote, body.local) in by_ends and _is_namespace(index, body.remote):
            paired.append(merges[ptr])
        else:
            unpaired.append(merges[ptr])
    return paired, unpaired


def _classes(index: Mapping[RecordPointer, Record], suppressed: frozenset) -> tuple[UnionFind, list, list]:
    uf = UnionFind(sorted(p for p, r in index.items() if isinstance(r.body, CreateNamespace)))
    paired, unpaired = _merge_pairs(index, suppressed)
    for rec in paired:
        uf.union(rec.body.local, rec.body.remote)
    return uf, paired, unpaired


def _root_of(index: Mapping[RecordPointer, Record], logs, author: EID) -> RecordPointer | None:
    log = logs.get(author)
    if not log:
        return None
    first = log[0]
    if isinstance(first.body, CreateNamespace) and first.pointer in index:
        return first.pointer
    return None


def _stop_wellformed(rec: Record, logs) -> bool:
    body: StopMerge = rec.body
    target_log = logs.get(body.target.author)
    if target_log is None:
        return True  # cannot check yet
    if body.target.seq < len(target_log) and target_log[body.target.seq].hash != body.target.hash:
        return False
    if body.stop_seq < len(target_log) and target_log[body.stop_seq].hash != body.stop_hash:
        return False
    return True


def _stop_authorized(rec: Record, index, logs, uf: UnionFind) -> bool:
    revoker = _root_of(index, logs, rec.author)
    revoked = _root_of(index, logs, rec.body.target.author)
    if revoker is None or revoked is None:
        return False
    return uf.find(revoker) == uf.find(revoked)


def _with_cut(cuts: Mapping[EID, int], rec: Record) -> dict[EID, int]:
    out = dict(cuts)
    author = rec.body.target.author
    out[author] = min(out.get(author, rec.body.stop_seq), rec.body.stop_seq)
    return out


def resolve_cuts(logs, base_cuts: Mapping[EID, int], suppressed: frozenset = frozenset()):
    """Decide which stop-merge records are honoured.

    A stop-merge is a candidate while it is visible, well formed and its
    author shares a root class with the revoked device.  Each round applies
    the candidates that no other candidate would invalidate (by hiding them
    or by breaking their author's cluster membership).  When every candidate
    is invalidated by another (mutual revocation) all of them are applied,
    which only ever hides more records.  Applied cuts are never lifted, so
    the loop terminates.
    """
    stops = sorted(
        (rec for log in logs.values() for rec in log if isinstance(rec.body, StopMerge)),
        key=lambda r: r.pointer,
    )
    applied: list[Record] = []
    cuts = dict(base_cuts)
    while True:
        index = _visible(logs, cuts)
        uf, _, _ = _classes(index, suppressed)
        done = {r.pointer for r in applied}
        cand = [
            r for r in stops
            if r.pointer not in done
            and r.pointer in index
            and _stop_wellformed(r, logs)
            and _stop_authorized(r, index, logs, uf)
        ]
        if not cand:
            return cuts, applied

        def survives(r: Record, q: Record) -> bool:
            trial = _with_cut(cuts, q)
            if trial == cuts:
                return True
            idx = _visible(logs, trial)
            if r.pointer not in idx:
                return False
            trial_uf, _, _ = _classes(idx, suppressed)
            return _stop_authorized(r, idx, logs, trial_uf)

        unattacked = [r for r in cand if all(survives(r, q) for q in cand if q is not r)]
        for rec in unattacked or cand:
            applied.append(rec)
            cuts = _with_cut(cuts, rec)


def compute_view(
    logs: Mapping[EID, list[Record]],
    fork_marks: Mapping[EID, int] | None = None,
    suppressed: Iterable[RecordPointer] = (),
) -> NamespaceView:
    suppressed = frozenset(suppressed)
    fork_marks = dict(fork_marks or {})
    # past a fork mark the stored branch depends on arrival order; drop it
    logs = {a: list(log)[: fork_marks.get(a, len(log))] for a, log in logs.items()}
    base_cuts = {a: f - 1 for a, f in fork_marks.items()}
    cuts, applied = resolve_cuts(logs, base_cuts, suppressed)
    index = _visible(logs, cuts)
    anomalies: list[Anomaly] = []

    applied_ptrs = {r.pointer for r in applied}
    for ptr in sorted(index):
        rec = index[ptr]
        if isinstance(rec.body, StopMerge) and ptr not in applied_ptrs:
            kind = "MalformedStopMerge" if not _stop_wellformed(rec, logs) else "UnauthorizedStopMerge"
            anomalies.append(Anomaly(kind, ptr))

    uf, paired, unpaired = _classes(index, suppressed)
    classes = sorted(
        (NamespaceClass(frozenset(g)) for g in uf.groups()), key=NamespaceClass.sort_key
    )
    class_index = {m: c for c in classes for m in c.members}
    owners = {c: c.authors() for c in classes}
    roots = {}
    for author in logs:
        root = _root_of(index, logs, author)
        if root is not None:
            roots[author] = root

    def writable(author: EID, ptr: RecordPointer) -> NamespaceClass | None:
        cls = class_index.get(ptr)
        if cls is None or author not in owners[cls]:
            return None
        return cls

    def child_target(child: RecordPointer) -> NamespaceClass | None:
        if child in class_index:
            return class_index[child]
        log = logs.get(child.author)
        limit = cuts.get(child.author, INFINITE)
        pending = (log is None or child.seq >= len(log)) and child.seq <= limit
        return NamespaceClass(frozenset([child])) if pending else None

    # tombstones first, then bindings
    dead: set[RecordPointer] = set()
    for ptr in sorted(index):
        rec = index[ptr]
        if not isinstance(rec.body, (Unlink, RemoveName)):
            continue
        target = index.get(rec.body.target)
        want = Link if isinstance(rec.body, Unlink) else NameDevice
        if target is None:
            continue
        if not isinstance(target.body, want):
            anomalies.append(Anomaly("TombstoneKindMismatch", ptr))
            continue
        if writable(rec.author, target.body.parent) is None:
            anomalies.append(Anomaly("UnauthorizedWrite", ptr))
            continue
        dead.add(target.pointer)

    all_bindings: list[Binding] = []
    for ptr in sorted(index):
        rec = index[ptr]
        body = rec.body
        if not isinstance(body, (Link, NameDevice)):
            continue
        cls = writable(rec.author, body.parent)
        if cls is None:
            anomalies.append(Anomaly("UnauthorizedWrite", ptr))
            continue
        if isinstance(body, Link):
            target = child_target(body.child)
            if target is None:
                anomalies.append(Anomaly("DanglingLink", ptr))
                continue
        else:
            target = body.device_eid
        all_bindings.append(Binding(normalize_label(body.name), body.name, ptr, target, ptr not in dead))

    grouped: dict[tuple[NamespaceClass, str], set[Binding]] = defaultdict(set)
    for b in all_bindings:
        if b.active:
            grouped[(class_index[index[b.source].body.parent], b.label)].add(b)
    bindings = {k: frozenset(v) for k, v in grouped.items()}

    conflicts: list[Conflict] = []
    for (cls, label), group in bindings.items():
        targets = {b.target for b in group}
        if len(targets) > 1:
            conflicts.append(NameConflict(cls, label, frozenset(targets)))
    for rec in unpaired:
        conflicts.append(UnpairedMerge(rec.pointer, class_index.get(rec.body.local)))
    stop_cuts: dict[EID, int] = {}
    for rec in applied:
        a = rec.body.target.author
        stop_cuts[a] = min(stop_cuts.get(a, rec.body.stop_seq), rec.body.stop_seq)
    for author, seq in fork_marks.items():
        # a fork wholly behind an honoured stop-merge changes nothing visible
        if seq <= stop_cuts.get(author, INFINITE):
            conflicts.append(ForkDetected(author, seq))
    conflicts.sort(key=_conflict_key)

    return NamespaceView(
        classes=tuple(classes),
        bindings=bindings,
        conflicts=tuple(conflicts),
        cuts=dict(sorted(cuts.items())),
        roots=dict(sorted(roots.items())),
        anomalies=tuple(anomalies),
        all_bindings=tuple(all_bindings),
        class_index=class_index,
    )


def build_view(store) -> NamespaceView:
    """View of a RecordStore-like object (``logs``, ``fork_marks``, ``suppressed``)."""
    logs = {a: list(log) for a, log in store.logs.items()}
    return compute_view(logs, getattr(store, "fork_marks", {}), getattr(store, "suppressed", ()))


def cluster_of(view: NamespaceView, device: EID) -> NamespaceClass:
    root = view.roots.get(device)
    if root is None:
        raise UnknownDevice(f"no visible root namespace for {device!r}")
    return view.class_index[root]


def list_conflicts(view: NamespaceView) -> list[Conflict]:
    return list(view.conflicts)


def class_bindings(view: NamespaceView, cls: NamespaceClass) -> dict[str, frozenset[Target]]:
    return {
        label: frozenset(b.target for b in group)
        for (c, label), group in sorted(view.bindings.items(), key=lambda kv: kv[0][1])
        if c == cls
    }


def cluster_devices(view: NamespaceView, cls: NamespaceClass) -> frozenset[EID]:
    """Devices whose root namespace belongs to ``cls``."""
    return frozenset(a for a, root in view.roots.items() if root in cls.members)


# -- text dump ---------------------------------------------------------------

def _fmt_ptr(p: RecordPointer, names: Mapping[EID, str]) -> str:
    who = names.get(p.author, p.author.hex()[:12])
    return f"{who}#{p.seq}:{p.hash.hex()[:8]}"


def _fmt_target(t: Target, names: Mapping[EID, str]) -> str:
    if isinstance(t, NamespaceClass):
        return "ns " + _fmt_ptr(t.representative, names)
    return "device " + names.get(t, t.hex()[:12])


def dump_view(view: NamespaceView, names: Mapping[EID, str] | None = None) -> str:
    """Deterministic text listing used by the CLI and golden tests."""
    names = names or {}
    lines = []
    for cls in view.classes:
        members = ", ".join(_fmt_ptr(m, names) for m in sorted(cls.members))
        lines.append(f"class {_fmt_ptr(cls.representative, names)} [{members}]")
        for label, targets in class_bindings(view, cls).items():
            shown = ", ".join(_fmt_target(t, names) for t in sorted(targets, key=target_key))
            lines.append(f"  {label} -> {shown}")
    for author, cut in view.cuts.items():
        lines.append(f"cut {names.get(author, author.hex()[:12])} <= {cut}")
    for c in view.conflicts:
        lines.append("conflict " + describe_conflict(c, names))
    for a in view.anomalies:
        lines.append(f"anomaly {a.kind} {_fmt_ptr(a.record, names)}")
    return "\n".join(lines) + "\n"


def describe_conflict(c: Conflict, names: Mapping[EID, str] | None = None) -> str:
    names = names or {}
    if isinstance(c, NameConflict):
        shown = ", ".join(_fmt_target(t, names) for t in sorted(c.targets, key=target_key))
        return f"NameConflict {c.label!r} in {_fmt_ptr(c.cls.representative, names)}: {shown}"
    if isinstance(c, UnpairedMerge):
        return f"UnpairedMerge {_fmt_ptr(c.merge, names)}"
    return f"ForkDetected {names.get(c.author, c.author.hex()[:12])} at seq {c.seq}"
