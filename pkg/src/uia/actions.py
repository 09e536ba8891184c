"""User-level operations that turn intent into log records.

Every action only appends to the acting device's own log.  Cross-device
steps (merge, link) exchange records directly between the two stores, which
models the devices sitting on the same local network during introduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .identity import EID, DeviceIdentity
from .names import check_label, parse_name
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
from .replication import RecordStore, gossip_round, ingest
from .resolver import DeviceResult, NamespaceResult, resolve
from .view import NamespaceClass, NamespaceView, cluster_of


class ActionError(Exception):
    pass


class UnknownPointer(ActionError):
    pass


class PointerKindError(ActionError):
    pass


class NotAuthorized(ActionError):
    pass


@dataclass
class Device:
    identity: DeviceIdentity
    store: RecordStore
    root: RecordPointer
    pending_merges: set[RecordPointer] = field(default_factory=set)

    @property
    def eid(self) -> EID:
        return self.identity.eid

    def view(self) -> NamespaceView:
        return self.store.view()

    def root_class(self) -> NamespaceClass:
        return cluster_of(self.view(), self.eid)

    def append(self, body) -> Record:
        return self.store.append_own(self.identity, body)

    def resolve(self, text: str):
        return resolve(self.view(), self.root_class(), parse_name(text))

    def log(self) -> list[Record]:
        return list(self.store.logs[self.eid])

    def __repr__(self) -> str:
        return f"Device({self.eid.short()})"


def init_device(identity: DeviceIdentity, default_name: str) -> Device:
    check_label(default_name)
    store = RecordStore(identity.eid, identity.public_key)
    root = store.append_own(identity, CreateNamespace()).pointer
    store.append_own(identity, NameDevice(root, identity.eid, default_name))
    return Device(identity, store, root)


def _exchange(a: Device, b: Device) -> None:
    """Both devices see each other's complete logs (and whatever else is in scope)."""
    ingest(b.store, a.log(), {a.eid: a.identity.public_key})
    ingest(a.store, b.log(), {b.eid: b.identity.public_key})
    gossip_round(a.store, b.store)


def _require_namespace(d: Device, ptr: RecordPointer) -> NamespaceClass:
    cls = d.view().class_of(ptr)
    if cls is None:
        raise UnknownPointer(f"{ptr!r} is not a visible create-namespace record")
    return cls


def _require_writable(d: Device, ptr: RecordPointer) -> NamespaceClass:
    cls = _require_namespace(d, ptr)
    if d.eid not in cls.authors():
        raise NotAuthorized("device owns no namespace in the target class")
    return cls


def merge_namespaces(
    a: Device, a_ns: RecordPointer, b: Device, b_ns: RecordPointer, *, interrupt: bool = False
) -> Record | None:
    """Write a's half of a merge pair and, unless interrupted, b's half.

    Returns a's merge record, or None when the namespaces already share a
    class.  An interrupted merge leaves a's record pending on ``a``.
    """
    _exchange(a, b)
    view = a.view()
    if view.class_of(a_ns) is not None and view.class_of(a_ns) == view.class_of(b_ns):
        return None
    mine = a.append(Merge(a_ns, b_ns))
    a.pending_merges.add(mine.pointer)
    ingest(b.store, a.log())
    if interrupt:
        return mine
    complete_merge(b, mine)
    _exchange(a, b)
    a.pending_merges.discard(mine.pointer)
    return mine


def complete_merge(d: Device, other_half: RecordPointer | Record) -> Record:
    """Write the counterpart of a merge record another device wrote."""
    ptr = other_half.pointer if isinstance(other_half, Record) else other_half
    rec = d.store.record(ptr)
    if rec is None or not isinstance(rec.body, Merge):
        raise UnknownPointer(f"{ptr!r} is not a known merge record")
    if rec.body.remote.author != d.eid:
        raise NotAuthorized("merge does not name this device's namespace")
    return d.append(Merge(rec.body.remote, rec.body.local))


def cancel_merge(d: Device, merge: RecordPointer) -> None:
    """Locally ignore one of our own unpaired merge records (never gossiped)."""
    d.store.suppressed.add(merge)
    d.store.touch()
    d.pending_merges.discard(merge)


def merge_devices(a: Device, b: Device, *, interrupt: bool = False) -> tuple[Device, Device]:
    merge_namespaces(a, a.root, b, b.root, interrupt=interrupt)
    return a, b


def link_users(a: Device, name_for_b: str, b: Device, name_for_a: str) -> tuple[Device, Device]:
    check_label(name_for_b)
    check_label(name_for_a)
    a.append(Link(a.root, b.root, name_for_b))
    b.append(Link(b.root, a.root, name_for_a))
    _exchange(a, b)
    return a, b


def name_device(d: Device, parent: RecordPointer, label: str, target: EID) -> Record:
    check_label(label)
    _require_writable(d, parent)
    return d.append(NameDevice(parent, EID(target), label))


def _visible_record(d: Device, ptr: RecordPointer) -> Record:
    rec = d.store.record(ptr)
    if rec is None or ptr.seq > d.store.visible_limit(ptr.author):
        raise UnknownPointer(f"{ptr!r} is not a visible record")
    return rec


def rename_binding(d: Device, old: RecordPointer, new_label: str) -> tuple[Record, Record]:
    check_label(new_label)
    rec = _visible_record(d, old)
    if not isinstance(rec.body, NameDevice):
        raise PointerKindError("rename needs a name-device record")
    _require_writable(d, rec.body.parent)
    named = d.append(NameDevice(rec.body.parent, rec.body.device_eid, new_label))
    removed = d.append(RemoveName(old))
    return named, removed


def remove_binding(d: Device, target: RecordPointer) -> Record:
    rec = _visible_record(d, target)
    if isinstance(rec.body, NameDevice):
        body = RemoveName(target)
    elif isinstance(rec.body, Link):
        body = Unlink(target)
    else:
        raise PointerKindError("only link and name-device records can be removed")
    _require_writable(d, rec.body.parent)
    return d.append(body)


def revoke_device(
    d: Device, target: EID, last_good: RecordPointer | None = None
) -> tuple[Record, list[Record]]:
    """Stop importing ``target``'s records after ``last_good`` and drop its names.

    ``last_good`` defaults to the newest record of ``target`` this device
    holds.  Returns the stop-merge record and the remove-name records written
    for every active name of ``target`` in the device's root class.
    """
    view = d.view()
    own = cluster_of(view, d.eid)
    try:
        theirs = cluster_of(view, target)
    except LookupError:
        raise NotAuthorized("target device is unknown") from None
    if own != theirs:
        raise NotAuthorized("target is not in this device's cluster")
    if last_good is None:
        tlog = d.store.logs[target]
        idx = len(tlog) - 1
        limit = d.store.visible_limit(target)
        if limit < idx:
            idx = int(limit)
        last_good = tlog[idx].pointer
    if last_good.author != target or d.store.record(last_good) is None:
        raise UnknownPointer("last_good must be a known record of the target")
    stop = d.append(StopMerge(last_good, last_good.seq, last_good.hash))
    removes = []
    for b in find_binding_all(view, own, target):
        removes.append(d.append(RemoveName(b.source)))
    return stop, removes


def find_binding_all(view: NamespaceView, cls: NamespaceClass, target: EID) -> list:
    """Active name-device bindings in ``cls`` that point at ``target``."""
    return sorted(
        (b for (c, _), group in view.bindings.items() if c == cls for b in group if b.target == target),
        key=lambda b: b.source,
    )


def find_binding(d: Device, label: str, target: EID | None = None, cls: NamespaceClass | None = None):
    """Active bindings for ``label`` in ``cls`` (default: the root class)."""
    cls = cls or d.root_class()
    found = sorted(d.view().lookup(cls, label), key=lambda b: b.source)
    if target is not None:
        found = [b for b in found if b.target == target]
    return found


def namespace_for(d: Device, text: str) -> RecordPointer:
    """A namespace the device itself created inside the class named ``text``."""
    result = d.resolve(text)
    if not isinstance(result, NamespaceResult):
        raise PointerKindError(f"{text!r} does not name a namespace")
    own = sorted(p for p in result.cls.members if p.author == d.eid)
    if not own:
        raise NotAuthorized(f"device owns no namespace under {text!r}")
    return own[0]


def create_group(
    devices: list[Device], group_label: str, edges: list[tuple[int, int]] | None = None
) -> dict[EID, RecordPointer]:
    """Give every device a new namespace linked as ``group_label`` and merge them.

    ``edges`` is a spanning tree over device indices (default: a star on the
    first device).  Returns each device's new namespace.
    """
    check_label(group_label)
    spaces = {}
    for d in devices:
        ns = d.append(CreateNamespace()).pointer
        d.append(Link(d.root, ns, group_label))
        spaces[d.eid] = ns
    if edges is None:
        edges = [(0, i) for i in range(1, len(devices))]
    for i, j in edges:
        a, b = devices[i], devices[j]
        merge_namespaces(a, spaces[a.eid], b, spaces[b.eid])
    return spaces


def resolves_to(d: Device, text: str) -> EID | None:
    try:
        result = d.resolve(text)
    except LookupError:
        return None
    return result.eid if isinstance(result, DeviceResult) else None
