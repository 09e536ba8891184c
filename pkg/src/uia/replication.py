"""Record stores and gossip anti-entropy between them."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .identity import ZERO_HASH, EID, DeviceIdentity, digest, eid_of, verify_record
from .records import (
    DeviceLog,
    Link,
    Merge,
    NameDevice,
    Record,
    RecordBody,
    RecordPointer,
    RemoveName,
    StopMerge,
    Unlink,
    append_record,
)
from .view import INFINITE, NamespaceClass, NamespaceView, build_view, cluster_of
from .wire import Records, Request, Summary

log = logging.getLogger(__name__)

PENDING_CAP = 1024


@dataclass
class StoreSummary:
    entries: dict[EID, int] = field(default_factory=dict)


@dataclass
class IngestReport:
    accepted: list[RecordPointer] = field(default_factory=list)
    buffered: list[RecordPointer] = field(default_factory=list)
    rejected: list[tuple[RecordPointer, str]] = field(default_factory=list)
    duplicates: int = 0
    forks: list[tuple[EID, int]] = field(default_factory=list)

    @property
    def changed(self) -> bool:
        return bool(self.accepted or self.forks)

    def reasons(self) -> list[str]:
        return [reason for _, reason in self.rejected]


class RecordStore:
    """A device's own log plus verified replicas of other devices' logs.

    ``suppressed`` holds locally cancelled merge records; it is consulted by
    the view but never sent to other devices.
    """

    def __init__(self, owner: EID, public_key: bytes | None = None):
        self.owner = EID(owner)
        self.logs: dict[EID, DeviceLog] = {self.owner: DeviceLog(self.owner)}
        self.trusted_keys: dict[EID, bytes] = {}
        self.fork_marks: dict[EID, int] = {}
        self.fork_evidence: dict[EID, list[Record]] = {}
        self.pending: dict[EID, dict[int, dict[bytes, Record]]] = {}
        self.suppressed: set[RecordPointer] = set()
        self.version = 0
        self._view: tuple[int, NamespaceView] | None = None
        if public_key is not None:
            self.learn_key(public_key)

    def __repr__(self) -> str:
        return f"RecordStore({self.owner.short()}, {len(self.logs)} logs)"

    def touch(self) -> None:
        self.version += 1

    def view(self) -> NamespaceView:
        if self._view is None or self._view[0] != self.version:
            self._view = (self.version, build_view(self))
        return self._view[1]

    def learn_key(self, public_key: bytes) -> EID:
        eid = eid_of(public_key)
        self.trusted_keys.setdefault(eid, public_key)
        return eid

    def record(self, pointer: RecordPointer) -> Record | None:
        log = self.logs.get(pointer.author)
        if log is None or pointer.seq >= len(log):
            return None
        rec = log[pointer.seq]
        return rec if rec.hash == pointer.hash else None

    def all_records(self) -> list[Record]:
        return [rec for author in sorted(self.logs) for rec in self.logs[author]]

    def append_own(self, identity: DeviceIdentity, body: RecordBody) -> Record:
        rec = append_record(self.logs[self.owner], identity, body)
        self.touch()
        return rec

    def visible_limit(self, author: EID) -> float:
        """Highest sequence number of ``author`` that still counts."""
        limit = self.view().visible_seq(author)
        if author in self.fork_marks:
            limit = min(limit, self.fork_marks[author] - 1)
        return limit


def summarize(store: RecordStore) -> StoreSummary:
    return StoreSummary({a: len(log) for a, log in sorted(store.logs.items())})


# -- ingest ------------------------------------------------------------------

def _mark_fork(store: RecordStore, author: EID, seq: int, evidence: Record, report: IngestReport) -> None:
    seq = max(seq, 0)
    if seq < store.fork_marks.get(author, INFINITE):
        store.fork_marks[author] = seq
        report.forks.append((author, seq))
        log.info("fork detected for %s at seq %d", author.short(), seq)
    known = store.fork_evidence.setdefault(author, [])
    if all(r.hash != evidence.hash for r in known):
        known.append(evidence)
    pending = store.pending.get(author, {})
    for s in [s for s in pending if s >= store.fork_marks[author]]:
        del pending[s]
    store.touch()


def _conflicting(store: RecordStore, rec: Record, report: IngestReport) -> None:
    """``rec`` differs from the stored record at its sequence number."""
    key = store.trusted_keys.get(rec.author)
    if key is None or not verify_record(key, rec.payload(), rec.signature):
        report.rejected.append((rec.pointer, "BadSignature"))
        return
    log_ = store.logs[rec.author]
    expected_prev = log_[rec.seq - 1].hash if rec.seq > 0 else ZERO_HASH
    if rec.seq == 0 and rec.prev_hash != ZERO_HASH:
        report.rejected.append((rec.pointer, "HashMismatch"))
        return
    fork_at = rec.seq if rec.prev_hash == expected_prev else rec.seq - 1
    _mark_fork(store, rec.author, fork_at, rec, report)
    report.rejected.append((rec.pointer, "Fork"))


def _drain(store: RecordStore, author: EID, view: NamespaceView, report: IngestReport) -> None:
    pending = store.pending.get(author)
    key = store.trusted_keys.get(author)
    if not pending or key is None:
        return
    dlog = store.logs.get(author)
    while True:
        n = len(dlog) if dlog is not None else 0
        cands = pending.pop(n, None)
        if not cands:
            return
        head = dlog.head_hash if dlog is not None else ZERO_HASH
        valid = []
        for h in sorted(cands):
            rec = cands[h]
            if not verify_record(key, rec.payload(), rec.signature):
                report.rejected.append((rec.pointer, "BadSignature"))
            elif rec.prev_hash != head:
                if n == 0:
                    report.rejected.append((rec.pointer, "HashMismatch"))
                else:
                    _mark_fork(store, author, n - 1, rec, report)
                    report.rejected.append((rec.pointer, "Fork"))
            else:
                valid.append(rec)
        if author in store.fork_marks and n >= store.fork_marks[author]:
            for rec in valid:
                report.rejected.append((rec.pointer, "AfterFork"))
            return
        if len(valid) > 1:
            _mark_fork(store, author, n, valid[1], report)
            for rec in valid:
                report.rejected.append((rec.pointer, "Fork"))
            return
        if not valid:
            return
        rec = valid[0]
        if dlog is None:
            dlog = store.logs[author] = DeviceLog(author)
        dlog._push(rec)
        store.touch()
        if rec.seq > view.visible_seq(author):
            report.rejected.append((rec.pointer, "BeyondStop"))
        else:
            report.accepted.append(rec.pointer)


def ingest(store: RecordStore, records, keys: dict[EID, bytes] | None = None) -> IngestReport:
    """Add records from any authors, in any order, with duplicates.

    A record is stored once it extends its author's verified chain.  Records
    with a missing predecessor (or whose author key is still unknown) are
    buffered.  Records at or after a detected fork are refused.

    Records past a stop-merge cut are reported as rejected (BeyondStop) but
    kept, chain-verified, behind the cut: they never count towards the view
    and are never forwarded.  Keeping them makes the final view independent
    of arrival order even when later records change which stop-merges are
    honoured.  Stop-merge records accepted by this call take effect on the
    next read of the view.
    """
    report = IngestReport()
    for eid, key in sorted((keys or {}).items()):
        if eid_of(key) != eid:
            report.rejected.append((RecordPointer(EID(eid), 0, ZERO_HASH), "BadKey"))
            continue
        store.learn_key(key)
    view = store.view()
    touched = set()
    for rec in sorted(records, key=lambda r: (r.author, r.seq, r.hash)):
        ptr = rec.pointer
        author = rec.author
        if rec.hash != _rehash(rec):
            report.rejected.append((ptr, "HashMismatch"))
            continue
        if any(r.hash == rec.hash for r in store.fork_evidence.get(author, ())):
            report.duplicates += 1
            continue
        dlog = store.logs.get(author)
        if dlog is not None and rec.seq < len(dlog):
            if dlog[rec.seq].hash == rec.hash:
                report.duplicates += 1
            else:
                _conflicting(store, rec, report)
            continue
        if author in store.fork_marks and rec.seq >= store.fork_marks[author]:
            report.rejected.append((ptr, "AfterFork"))
            continue
        key = store.trusted_keys.get(author)
        if key is not None and not verify_record(key, rec.payload(), rec.signature):
            report.rejected.append((ptr, "BadSignature"))
            continue
        slot = store.pending.setdefault(author, {})
        if rec.hash in slot.get(rec.seq, {}):
            report.duplicates += 1
            continue
        if sum(len(v) for v in slot.values()) >= PENDING_CAP:
            newest = max(slot)
            if rec.seq >= newest:
                report.rejected.append((ptr, "Overflow"))
                continue
            for dropped in slot.pop(newest).values():
                report.rejected.append((dropped.pointer, "Overflow"))
        slot.setdefault(rec.seq, {})[rec.hash] = rec
        touched.add(author)
    for author in sorted(touched | set(store.pending)):
        _drain(store, author, view, report)
    accepted = set(report.accepted)
    for author, slot in sorted(store.pending.items()):
        for seq in sorted(slot):
            for h in sorted(slot[seq]):
                p = slot[seq][h].pointer
                if p not in accepted and author in touched:
                    report.buffered.append(p)
    return report


def _rehash(rec: Record) -> bytes:
    return digest(rec.payload())


# -- scope and anti-entropy ----------------------------------------------------

def structural_pointers(body: RecordBody) -> list[RecordPointer]:
    """Pointers needed to interpret a record (link children excluded)."""
    if isinstance(body, Link):
        return [body.parent]
    if isinstance(body, NameDevice):
        return [body.parent]
    if isinstance(body, Merge):
        return [body.local, body.remote]
    if isinstance(body, (Unlink, RemoveName, StopMerge)):
        return [body.target]
    return []


def replication_scope(store: RecordStore) -> set[EID]:
    """Authors whose logs this device keeps.

    The owner's cluster, every cluster linked directly from the owner's root
    class, and the closure of those logs under structural pointers.
    """
    view = store.view()
    scope = {store.owner}
    try:
        own = cluster_of(view, store.owner)
    except LookupError:
        own = None
    if own is not None:
        scope |= own.authors()
        for (cls, _label), group in view.bindings.items():
            if cls != own:
                continue
            for b in group:
                if isinstance(b.target, NamespaceClass):
                    scope |= b.target.authors()
    frontier = set(scope)
    while frontier:
        found = set()
        for author in sorted(frontier):
            dlog = store.logs.get(author)
            if dlog is None:
                continue
            limit = store.visible_limit(author)
            for rec in dlog:
                if rec.seq > limit:
                    break
                for p in structural_pointers(rec.body):
                    if p.author not in scope:
                        found.add(p.author)
        scope |= found
        frontier = found
    return scope


def wants(store: RecordStore, scope: set[EID] | None = None) -> dict[EID, int]:
    """Next-needed sequence number for every author in scope still open."""
    scope = replication_scope(store) if scope is None else scope
    out = {}
    for author in sorted(scope):
        have = len(store.logs[author]) if author in store.logs else 0
        if have > store.visible_limit(author):
            continue
        out[author] = have
    return out


def records_for(store: RecordStore, want: dict[EID, int]) -> tuple[list[Record], dict[EID, bytes]]:
    """Records (and first-contact keys) that a peer asking for ``want`` lacks."""
    records: list[Record] = []
    keys: dict[EID, bytes] = {}
    for author in sorted(want):
        dlog = store.logs.get(author)
        start = want[author]
        evidence = store.fork_evidence.get(author, [])
        if dlog is None and not evidence:
            continue
        limit = store.visible_limit(author)
        batch = [r for r in (dlog or []) if start <= r.seq <= limit]
        batch += evidence
        if not batch:
            continue
        records += batch
        if start == 0 and author in store.trusted_keys:
            keys[author] = store.trusted_keys[author]
    return records, keys


def gossip_round(
    a: RecordStore,
    b: RecordStore,
    scope_a: set[EID] | None = None,
    scope_b: set[EID] | None = None,
    max_exchanges: int = 32,
) -> tuple[RecordStore, RecordStore]:
    """Exchange summaries and missing records both ways until nothing moves."""
    for _ in range(max_exchanges):
        recs, keys = records_for(b, wants(a, scope_a))
        ra = ingest(a, recs, keys)
        recs, keys = records_for(a, wants(b, scope_b))
        rb = ingest(b, recs, keys)
        if not (ra.changed or rb.changed):
            break
    return a, b


def sync_all(stores: list[RecordStore], max_passes: int = 64) -> int:
    """Gossip every pair until no store changes; returns passes used."""
    for n in range(1, max_passes + 1):
        before = [s.version for s in stores]
        for i in range(len(stores)):
            for j in range(i + 1, len(stores)):
                gossip_round(stores[i], stores[j])
        if [s.version for s in stores] == before:
            return n
    return max_passes


# -- wire handler --------------------------------------------------------------

def handle_gossip(store: RecordStore, msg, reply, me: EID) -> IngestReport | None:
    """Answer one gossip message; ``reply`` sends a message back to the peer.

    A summary (the peer's wants) is answered with the records it lacks and,
    if it asked for a reply, with our own wants.  Records that change the
    store trigger a fresh summary so newly in-scope authors get fetched.
    """
    if isinstance(msg, Summary):
        recs, keys = records_for(store, msg.entries)
        if recs or keys:
            reply(Records(me, tuple(recs), keys))
        if msg.reply:
            reply(Summary(me, wants(store), reply=False))
        return None
    if isinstance(msg, Request):
        recs, keys = records_for(store, {msg.author: msg.from_seq})
        if recs:
            reply(Records(me, tuple(recs), keys))
        return None
    if isinstance(msg, Records):
        report = ingest(store, msg.records, msg.keys)
        if report.changed:
            reply(Summary(me, wants(store), reply=False))
        return report
    raise TypeError(f"not a gossip message: {type(msg).__name__}")
