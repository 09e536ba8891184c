"""Locating devices over the social overlay.

Each simulated node keeps a location table of the addresses it has seen
for its social neighbours.  To reach a device it cannot find directly, a
node floods a search over neighbours with a growing TTL; the target answers
along the reverse path and, when the target sits behind a NAT, traffic is
relayed through the next-to-last hop of that path.

The driver functions (``ring_search``, ``open_channel``, ``connect``) take
a simulator world and run it until their exchange completes or times out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .identity import EID, digest, pack_u64
from .replication import handle_gossip
from .view import NamespaceClass, cluster_of
from .wire import (
    Echo,
    Found,
    LocPing,
    LocPong,
    RelayData,
    RelayOpen,
    Search,
    decode_message,
    encode_message,
)

HISTORY_BOUND = 8
DEFAULT_MAX_TTL = 6
DEDUP_TICKS = 64
DIRECT = "Direct"
RELAYED = "Relayed"


class SearchNotFound(LookupError):
    pass


class ChannelFailed(ConnectionError):
    pass


@dataclass
class LocationTable:
    """Current and past addresses of peers.  ``history`` is newest first and
    includes the current address."""

    bound: int = HISTORY_BOUND
    current: dict[EID, str] = field(default_factory=dict)
    history: dict[EID, list[str]] = field(default_factory=dict)

    def addresses(self, peer: EID) -> list[str]:
        return list(self.history.get(peer, ()))

    def forget(self, peer: EID) -> None:
        self.current.pop(peer, None)
        self.history.pop(peer, None)


def update_location(table: LocationTable, peer: EID, address: str) -> LocationTable:
    hist = table.history.setdefault(peer, [])
    if address in hist:
        hist.remove(address)
    hist.insert(0, address)
    del hist[table.bound:]
    table.current[peer] = address
    return table


@dataclass(frozen=True)
class SearchResult:
    target: EID
    path: tuple[EID, ...]
    address: str
    hops: tuple[tuple[EID, str], ...] = ()

    @property
    def length(self) -> int:
        return len(self.path) - 1


@dataclass
class Channel:
    endpoints: tuple[EID, EID]
    mode: str
    address: str
    relay: EID | None = None
    relay_address: str | None = None

    @property
    def peer(self) -> EID:
        return self.endpoints[1]


@dataclass
class RoutingState:
    seen: dict[bytes, tuple[int, int]] = field(default_factory=dict)
    results: dict[bytes, SearchResult] = field(default_factory=dict)
    pongs: set[tuple[EID, int]] = field(default_factory=set)
    echoes: list[bytes] = field(default_factory=list)
    sessions: dict[frozenset, dict[EID, str]] = field(default_factory=dict)
    channels: dict[EID, Channel] = field(default_factory=dict)
    accepts_relay: bool = True
    counter: int = 0

    def nonce(self) -> int:
        self.counter += 1
        return self.counter


def social_neighbors(device) -> set[EID]:
    """Own cluster members plus members of clusters linked from the root class."""
    view = device.view()
    own = cluster_of(view, device.eid)
    out = set(own.authors())
    for (cls, _label), group in view.bindings.items():
        if cls != own:
            continue
        for b in group:
            if isinstance(b.target, NamespaceClass):
                out |= b.target.authors()
    out.discard(device.eid)
    return out


def ring_timeout(world, ttl: int) -> int:
    """Two round trips over ``ttl`` cross-network hops."""
    return 2 * (2 * ttl * world.wan_delay)


# -- message handling ----------------------------------------------------------

def _prune_seen(world, state: RoutingState) -> None:
    horizon = world.clock - DEDUP_TICKS
    for qid in [q for q, (_, t) in state.seen.items() if t < horizon]:
        del state.seen[qid]


def _reply_direct(world, node, address):
    return lambda msg: world.send(node, address, msg)


def handle_message(world, node, data: bytes, from_addr: str) -> None:
    """Entry point for every packet delivered to ``node``."""
    msg = decode_message(data)
    if isinstance(msg, RelayData):
        _on_relay_data(world, node, msg, from_addr)
        return
    _dispatch(world, node, msg, from_addr, _reply_direct(world, node, from_addr), relayed=False)


def _dispatch(world, node, msg, from_addr, reply, relayed: bool) -> None:
    st = node.routing
    if isinstance(msg, LocPong):
        if not relayed:
            update_location(node.table, msg.sender, msg.address)
        st.pongs.add((msg.sender, msg.nonce))
    elif isinstance(msg, LocPing):
        if not relayed:
            update_location(node.table, msg.sender, msg.address)
        reply(LocPong(node.eid, node.address, msg.nonce))
    elif isinstance(msg, Search):
        _on_search(world, node, msg, from_addr)
    elif isinstance(msg, Found):
        _on_found(world, node, msg)
    elif isinstance(msg, RelayOpen):
        if st.accepts_relay:
            key = frozenset((msg.sender, msg.target))
            st.sessions[key] = {msg.sender: from_addr, msg.target: msg.target_address}
            world.note("relay-open", node, msg.target_address, f"{msg.sender.short()}->{msg.target.short()}")
        else:
            world.note("relay-refuse", node, from_addr, msg.sender.short())
    elif isinstance(msg, Echo):
        if msg.reply:
            st.echoes.append(msg.payload)
        else:
            reply(Echo(node.eid, msg.payload, reply=True))
    else:
        handle_gossip(node.device.store, msg, reply, node.eid)


def _on_relay_data(world, node, msg: RelayData, from_addr: str) -> None:
    if msg.dst == node.eid:
        inner = decode_message(msg.payload)

        def reply(m):
            world.send(node, from_addr, RelayData(node.eid, node.eid, msg.src, encode_message(m)))

        _dispatch(world, node, inner, from_addr, reply, relayed=True)
        return
    session = node.routing.sessions.get(frozenset((msg.src, msg.dst)))
    if session is None or msg.dst not in session:
        world.note("drop", node, from_addr, "no relay session")
        return
    world.send(node, session[msg.dst], RelayData(node.eid, msg.src, msg.dst, msg.payload))


def _on_search(world, node, msg: Search, from_addr: str) -> None:
    st = node.routing
    _prune_seen(world, st)
    prior = st.seen.get(msg.qid)
    if prior is not None and prior[0] >= msg.ttl:
        return
    st.seen[msg.qid] = (msg.ttl, world.clock)
    path = msg.path + ((node.eid, node.address),)
    if msg.target == node.eid:
        if prior is None:
            world.send(node, from_addr, Found(node.eid, msg.qid, path, node.address))
        return
    if msg.ttl <= 1:
        return
    on_path = {e for e, _ in path}
    fwd = Search(node.eid, msg.qid, msg.origin, msg.target, msg.ttl - 1, path)
    for peer in sorted(social_neighbors(node.device) - on_path):
        for addr in node.table.addresses(peer):
            world.send(node, addr, fwd)


def _on_found(world, node, msg: Found) -> None:
    eids = [e for e, _ in msg.path]
    if node.eid not in eids:
        return
    i = eids.index(node.eid)
    if i == 0:
        target = eids[-1]
        node.routing.results.setdefault(msg.qid, SearchResult(target, tuple(eids), msg.address, msg.path))
        return
    world.send(node, msg.path[i - 1][1], Found(node.eid, msg.qid, msg.path, msg.address))


# -- drivers -------------------------------------------------------------------

def _query_id(node) -> bytes:
    return digest(bytes(node.eid) + pack_u64(node.routing.nonce()))[:16]


def ring_search(world, origin, target: EID, max_ttl: int = DEFAULT_MAX_TTL) -> SearchResult:
    """Flood for ``target`` with TTL 1..max_ttl; raises SearchNotFound."""
    target = EID(target)
    if not origin.online or origin.address is None:
        raise SearchNotFound(f"{origin.name} is offline")
    if target == origin.eid:
        return SearchResult(target, (target,), origin.address, ((target, origin.address),))
    st = origin.routing
    neighbors = sorted(social_neighbors(origin.device))
    for ttl in range(1, max_ttl + 1):
        qid = _query_id(origin)
        st.seen[qid] = (ttl, world.clock)
        path = ((origin.eid, origin.address),)
        world.note("search", origin, target.short(), f"ttl={ttl}")
        for peer in neighbors:
            for addr in origin.table.addresses(peer):
                world.send(origin, addr, Search(origin.eid, qid, origin.eid, target, ttl, path))
        world.wait_until(lambda: qid in st.results, world.clock + ring_timeout(world, ttl))
        if qid in st.results:
            result = st.results.pop(qid)
            world.note("found", origin, target.short(), f"hops={result.length}")
            return result
    world.note("not-found", origin, target.short(), f"max_ttl={max_ttl}")
    raise SearchNotFound(target.short())


def send_on(world, node, channel: Channel, msg) -> None:
    if channel.mode == DIRECT:
        world.send(node, channel.address, msg)
    else:
        world.send(node, channel.relay_address, RelayData(node.eid, node.eid, channel.peer, encode_message(msg)))


def _probe(world, node, channel: Channel) -> bool:
    nonce = node.routing.nonce()
    send_on(world, node, channel, LocPing(node.eid, node.address, nonce))
    legs = 1 if channel.mode == DIRECT else 2
    key = (channel.peer, nonce)
    world.wait_until(lambda: key in node.routing.pongs, world.clock + 2 * 2 * legs * world.wan_delay)
    if key in node.routing.pongs:
        node.routing.pongs.discard(key)
        return True
    return False


def open_channel(world, origin, result: SearchResult) -> Channel:
    """Dial the search result directly, else relay via path[-2], path[-3], ..."""
    ends = (origin.eid, result.target)
    ch = Channel(ends, DIRECT, result.address)
    if _probe(world, origin, ch):
        origin.routing.channels[result.target] = ch
        world.note("channel", origin, result.target.short(), DIRECT)
        return ch
    hops = result.hops or tuple((e, "") for e in result.path)
    for relay_eid, relay_addr in reversed(hops[1:-1]):
        world.send(origin, relay_addr, RelayOpen(origin.eid, result.target, result.address))
        ch = Channel(ends, RELAYED, result.address, relay_eid, relay_addr)
        if _probe(world, origin, ch):
            origin.routing.channels[result.target] = ch
            world.note("channel", origin, result.target.short(), f"{RELAYED} via {relay_eid.short()}")
            return ch
    world.note("channel-failed", origin, result.target.short(), "")
    raise ChannelFailed(result.target.short())


def connect(world, origin, target: EID, max_ttl: int = DEFAULT_MAX_TTL) -> Channel:
    """Reuse a working channel, dial known addresses, or search and open one."""
    target = EID(target)
    st = origin.routing
    cached = st.channels.get(target)
    if cached is not None:
        if _probe(world, origin, cached):
            return cached
        del st.channels[target]
    for addr in origin.table.addresses(target):
        ch = Channel((origin.eid, target), DIRECT, addr)
        if _probe(world, origin, ch):
            st.channels[target] = ch
            return ch
    try:
        result = ring_search(world, origin, target, max_ttl)
    except SearchNotFound as exc:
        raise ChannelFailed(str(exc)) from None
    return open_channel(world, origin, result)


def echo(world, node, channel: Channel, payload: bytes) -> bool:
    """Send ``payload`` to the far end and wait for it to come back."""
    send_on(world, node, channel, Echo(node.eid, payload))
    legs = 1 if channel.mode == DIRECT else 2
    world.wait_until(lambda: payload in node.routing.echoes, world.clock + 2 * 2 * legs * world.wan_delay)
    if payload in node.routing.echoes:
        node.routing.echoes.remove(payload)
        return True
    return False
