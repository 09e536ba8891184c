"""Builders shared by the test modules."""

from __future__ import annotations

import random
from dataclasses import fields as dc_fields
from dataclasses import replace
from functools import lru_cache

from uia.identity import ZERO_HASH, EID, DeviceIdentity, digest, generate_identity
from uia.records import (
    CreateNamespace,
    Link,
    Merge,
    NameDevice,
    Record,
    RecordPointer,
    RemoveName,
    StopMerge,
    Unlink,
    make_record,
)
from uia.replication import RecordStore, ingest

POOL_SIZE = 12
LABELS = ("a", "b", "c", "Bob", "bob")


@lru_cache(maxsize=None)
def ident(i: int) -> DeviceIdentity:
    return generate_identity(f"test-pool-{i}")


class LogBuilder:
    """Writes signed records for several identities in one global order."""

    def __init__(self):
        self.logs: dict[EID, list[Record]] = {}
        self.order: list[Record] = []
        self.identities: dict[EID, DeviceIdentity] = {}

    def add(self, identity: DeviceIdentity, body) -> Record:
        self.identities[identity.eid] = identity
        log = self.logs.setdefault(identity.eid, [])
        prev = log[-1].hash if log else ZERO_HASH
        rec = make_record(identity, len(log), prev, body)
        log.append(rec)
        self.order.append(rec)
        return rec

    def keys(self) -> dict[EID, bytes]:
        return {e: i.public_key for e, i in self.identities.items()}

    def store(self, owner: DeviceIdentity | None = None, records=None) -> RecordStore:
        owner = owner or next(iter(self.identities.values()))
        store = RecordStore(owner.eid, owner.public_key)
        ingest(store, self.order if records is None else records, self.keys())
        return store


def phantom_pointer(rng: random.Random, author: EID, seq: int) -> RecordPointer:
    return RecordPointer(author, seq, digest(rng.randbytes(8)))


def random_store(
    rng: random.Random,
    n_devices: int = 3,
    n_records: int = 30,
    *,
    stop_merges: bool = False,
    forks: int = 0,
) -> tuple[LogBuilder, list[Record]]:
    """A random multi-device record set.

    Covers every record type, unpaired merges, conflicting labels, tombstones
    of the wrong kind, writes without authority and links to records that
    are not present.  Stop-merges are written only by the first device, which
    is never revoked itself; ``forks`` adds that many conflicting records for
    other devices.  Returns the builder and the full record list (forks
    included).
    """
    ids = [ident(i) for i in rng.sample(range(POOL_SIZE), n_devices)]
    admin = ids[0]
    by_eid = {d.eid: d for d in ids}
    b = LogBuilder()
    cns: list[RecordPointer] = [b.add(d, CreateNamespace()).pointer for d in ids]
    names: list[RecordPointer] = []
    links: list[RecordPointer] = []
    targets = [d.eid for d in ids] + [ident(POOL_SIZE + 1).eid]
    while len(b.order) < n_records:
        d = rng.choice(ids)
        own = [p for p in cns if p.author == d.eid]
        r = rng.random()
        if r < 0.08:
            cns.append(b.add(d, CreateNamespace()).pointer)
        elif r < 0.33:
            parent = rng.choice(own if rng.random() < 0.8 else cns)
            names.append(b.add(d, NameDevice(parent, rng.choice(targets), rng.choice(LABELS))).pointer)
        elif r < 0.50:
            parent = rng.choice(own if rng.random() < 0.8 else cns)
            if rng.random() < 0.1:
                other = rng.choice(ids)
                child = phantom_pointer(rng, other.eid, len(b.logs[other.eid]) + rng.randrange(3))
            else:
                child = rng.choice(cns)
            links.append(b.add(d, Link(parent, child, rng.choice(LABELS))).pointer)
        elif r < 0.72:
            remote_choices = [p for p in cns if p.author != d.eid]
            if not remote_choices:
                continue
            local, remote = rng.choice(own), rng.choice(remote_choices)
            b.add(d, Merge(local, remote))
            if rng.random() < 0.8:
                b.add(by_eid[remote.author], Merge(remote, local))
        elif r < 0.86:
            pool = names + links
            if not pool:
                continue
            victim = rng.choice(pool)
            wrong = rng.random() < 0.1
            is_name = victim in names
            body = RemoveName(victim) if is_name != wrong else Unlink(victim)
            b.add(d, body)
        elif stop_merges and r < 0.93:
            others = [x for x in ids if x is not admin]
            victim = rng.choice(others)
            vlog = b.logs[victim.eid]
            seq = rng.randrange(len(vlog))
            good = vlog[seq]
            stop_hash = good.hash if rng.random() < 0.9 else digest(b"wrong")
            b.add(admin, StopMerge(good.pointer, seq, stop_hash))
    records = list(b.order)
    candidates = [x for x in ids if x is not admin and len(b.logs[x.eid]) >= 2]
    for _ in range(forks):
        if not candidates:
            break
        d = rng.choice(candidates)
        log = b.logs[d.eid]
        n = rng.randrange(1, len(log))
        root = log[0].pointer
        records.append(make_record(d, n, log[n - 1].hash, NameDevice(root, d.eid, "forged")))
    return b, records


def random_body(rng: random.Random, author: EID, log: list[Record]) -> object:
    """Any record type, with pointers into ``log`` (or phantom pointers)."""
    if not log:
        return CreateNamespace()
    ptr = lambda: rng.choice(log).pointer  # noqa: E731
    other = ident(POOL_SIZE + 2).eid
    kind = rng.randrange(7)
    if kind == 0:
        return CreateNamespace()
    if kind == 1:
        return Link(ptr(), phantom_pointer(rng, other, rng.randrange(9)), rng.choice(LABELS))
    if kind == 2:
        return NameDevice(ptr(), rng.choice([author, other]), rng.choice(LABELS))
    if kind == 3:
        return Merge(log[0].pointer, phantom_pointer(rng, other, 0))
    if kind == 4:
        return Unlink(ptr())
    if kind == 5:
        return RemoveName(ptr())
    target = phantom_pointer(rng, other, rng.randrange(9))
    return StopMerge(target, target.seq, target.hash)


def random_log(identity: DeviceIdentity, n: int, rng: random.Random) -> list[Record]:
    b = LogBuilder()
    for _ in range(n):
        b.add(identity, random_body(rng, identity.eid, b.logs.get(identity.eid, [])))
    return b.logs[identity.eid]


def _flip(data: bytes) -> bytes:
    return bytes([data[0] ^ 0x01]) + bytes(data[1:])


def _mutate_value(value):
    if isinstance(value, RecordPointer):
        return RecordPointer(value.author, value.seq, _flip(value.hash))
    if isinstance(value, EID):
        return EID(_flip(value))
    if isinstance(value, str):
        return value + "x" if value.islower() else value.lower()
    if isinstance(value, int):
        return value + 1
    return _flip(value)


def mutations(rec: Record):
    """Every single-field alteration of ``rec`` that leaves its hash untouched
    (and one that replaces the stored hash itself)."""
    yield "author", replace(rec, author=EID(_flip(rec.author)))
    yield "seq", replace(rec, seq=rec.seq + 1)
    yield "prev_hash", replace(rec, prev_hash=_flip(rec.prev_hash))
    yield "hash", replace(rec, hash=_flip(rec.hash))
    yield "signature", replace(rec, signature=_flip(rec.signature))
    for f in dc_fields(rec.body):
        new_body = replace(rec.body, **{f.name: _mutate_value(getattr(rec.body, f.name))})
        yield f"body.{f.name}", replace(rec, body=new_body)
    swapped = CreateNamespace() if not isinstance(rec.body, CreateNamespace) else Unlink(
        RecordPointer(rec.author, 0, rec.prev_hash)
    )
    yield "body.type", replace(rec, body=swapped)


def device(name: str, default_name: str | None = None):
    from uia.actions import init_device

    return init_device(generate_identity(f"dev-{name}"), default_name or name)


def full_sync(*devices) -> None:
    from uia.replication import sync_all

    sync_all([d.store for d in devices])


def social_world(rng: random.Random, n_devices: int, seed: int, extra_edges: int = 8):
    """A simulated world of singleton users linked along a random graph.

    Everybody is introduced on one public network, then scattered over
    public, private and ad hoc networks; some devices go offline and some
    move silently (offline while migrating), leaving stale addresses in
    their neighbours' tables.  One monitoring round runs at the end.
    Returns the world and the list of social edges by device name.
    """
    from uia.simnet import ADHOC, PRIVATE, PUBLIC, SimWorld

    world = SimWorld(seed, monitoring=False)
    world.add_network("intro", PUBLIC)
    for i in range(3):
        world.add_network(f"pub{i}", PUBLIC)
    for i in range(3):
        world.add_network(f"nat{i}", PRIVATE)
    world.add_network("air", ADHOC)
    names = [f"d{i}" for i in range(n_devices)]
    for n in names:
        world.add_device(n, "intro")
    edges = set()
    for i in range(1, n_devices):
        edges.add((rng.randrange(i), i))
    for _ in range(extra_edges):
        a, b = rng.sample(range(n_devices), 2)
        edges.add((min(a, b), max(a, b)))
    for a, b in sorted(edges):
        world.link(names[a], f"u{b}", names[b], f"u{a}")
    world.run_until_idle()
    nets = ["pub0", "pub1", "pub2", "nat0", "nat1", "nat2", "air", "intro"]
    weights = [25, 25, 20, 10, 8, 6, 3, 3]
    for n in names:
        world.migrate(n, rng.choices(nets, weights)[0])
        world.run_until_idle()
    for n in names:
        r = rng.random()
        if r < 0.08:
            world.set_online(n, False)
        elif r < 0.18:
            world.set_online(n, False)
            world.migrate(n, rng.choice(nets[:6]))
            world.set_online(n, True)
    world.monitor_round()
    world.run_until_idle()
    return world, [(names[a], names[b]) for a, b in sorted(edges)]


def live_edges(world):
    """X -> Y when X can forward a search to Y's live address and Y can answer back."""
    from uia.routing import social_neighbors

    out: dict[str, set[str]] = {}
    for x in world.sorted_nodes():
        out[x.name] = set()
        if not x.online:
            continue
        for peer in social_neighbors(x.device):
            y = world.devices.get(peer)
            if y is None or not y.online:
                continue
            if y.address not in x.table.addresses(peer):
                continue
            if world.blocked(x.address, y.address) or world.blocked(y.address, x.address):
                continue
            out[x.name].add(y.name)
    return out


def bfs_distance(edges: dict[str, set[str]], src: str, dst: str, limit: int) -> int | None:
    from collections import deque

    dist = {src: 0}
    queue = deque([src])
    while queue:
        cur = queue.popleft()
        if cur == dst:
            return dist[cur]
        if dist[cur] == limit:
            continue
        for nxt in sorted(edges[cur]):
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return None
