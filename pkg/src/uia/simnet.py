"""Deterministic discrete-event network simulator.

Devices sit on named networks.  Public networks accept traffic from
anywhere, private networks sit behind a NAT that only admits replies on
flows their members opened, and ad hoc networks have no uplink at all.
Time advances in integer ticks; every send, delivery, drop and topology
change is written to a trace as ``tick|event|src|dst|detail``.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import random
from dataclasses import dataclass, field
from typing import Callable

from .actions import Device, init_device, link_users, merge_devices
from .identity import EID, EncodingError, generate_identity
from .replication import replication_scope, wants
from .routing import (
    ChannelFailed,
    LocationTable,
    RoutingState,
    connect,
    handle_message,
    send_on,
    social_neighbors,
    update_location,
)
from .wire import LocPing, Summary, decode_message, describe, encode_message

log = logging.getLogger(__name__)

PUBLIC = "public"
PRIVATE = "private"
ADHOC = "adhoc"
NETWORK_KINDS = (PUBLIC, PRIVATE, ADHOC)


class SimError(Exception):
    pass


class UnknownNetwork(SimError, KeyError):
    pass


class UnknownDevice(SimError, KeyError):
    pass


@dataclass
class Network:
    name: str
    kind: str
    members: set[str] = field(default_factory=set)


@dataclass(order=True)
class SimEvent:
    at: int
    order: int
    kind: str = field(compare=False)
    payload: tuple = field(compare=False, default=())


class Node:
    """A simulated host: one UIA device plus its routing state."""

    def __init__(self, name: str, device: Device):
        self.name = name
        self.device = device
        self.network: str | None = None
        self.address: str | None = None
        self.online = True
        self.table = LocationTable()
        self.routing = RoutingState()

    @property
    def eid(self) -> EID:
        return self.device.eid

    def __repr__(self) -> str:
        return f"Node({self.name}@{self.address})"


class SimWorld:
    def __init__(
        self,
        seed: int = 0,
        *,
        lan_delay: int = 1,
        wan_delay: int = 3,
        loss: float = 0.0,
        ping_interval: int = 10,
        monitoring: bool = True,
        background_gossip: bool = False,
    ):
        self.seed = seed
        self.rng = random.Random(seed)
        self.clock = 0
        self.lan_delay = lan_delay
        self.wan_delay = wan_delay
        self.loss = loss
        self.ping_interval = ping_interval
        self.monitoring = monitoring
        self.background_gossip = background_gossip
        self.queue: list[SimEvent] = []
        self._order = itertools.count()
        self.nodes: dict[str, Node] = {}
        self.devices: dict[EID, Node] = {}
        self.networks: dict[str, Network] = {}
        self.live: dict[str, Node] = {}
        self.flows: set[tuple[str, str]] = set()
        self.partitions: list[frozenset[str]] = []
        self.trace: list[str] = []
        self.sent = 0
        self._next_host: dict[str, int] = {}

    # -- bookkeeping -------------------------------------------------------

    def note(self, event: str, src, dst, detail: str = "") -> None:
        def label(x):
            if isinstance(x, Node):
                return x.name
            if isinstance(x, str) and x in self.live:
                return self.live[x].name
            return "-" if x is None else str(x)

        self.trace.append(f"{self.clock}|{event}|{label(src)}|{label(dst)}|{detail}")

    def trace_text(self) -> str:
        return "".join(line + "\n" for line in self.trace)

    def node(self, name: str) -> Node:
        try:
            return self.nodes[name]
        except KeyError:
            raise UnknownDevice(name) from None

    def add_network(self, name: str, kind: str = PUBLIC) -> Network:
        if kind not in NETWORK_KINDS:
            raise SimError(f"unknown network kind {kind!r}")
        if name in self.networks:
            raise SimError(f"network {name!r} already exists")
        self.networks[name] = Network(name, kind)
        self._next_host[name] = 0
        return self.networks[name]

    def add_device(self, name: str, network: str, default_name: str | None = None, identity=None) -> Node:
        if name in self.nodes:
            raise SimError(f"device {name!r} already exists")
        identity = identity or generate_identity(f"{self.seed}/{name}")
        node = Node(name, init_device(identity, default_name or name))
        self.nodes[name] = node
        self.devices[node.eid] = node
        self._attach(node, network)
        self.note("join", node, node.address, network)
        return node

    def _attach(self, node: Node, network: str) -> None:
        if network not in self.networks:
            raise UnknownNetwork(network)
        self._next_host[network] += 1
        node.network = network
        node.address = f"{network}:{self._next_host[network]}"
        self.networks[network].members.add(node.name)
        self.live[node.address] = node

    def network_of(self, address: str) -> str:
        return address.rsplit(":", 1)[0]

    # -- reachability ------------------------------------------------------

    def _partitioned(self, a: str, b: str) -> bool:
        return any((a in p) != (b in p) for p in self.partitions)

    def blocked(self, src_addr: str, dst_addr: str) -> str | None:
        """Why a packet from ``src_addr`` to ``dst_addr`` cannot arrive, or None."""
        dst = self.live.get(dst_addr)
        if dst is None:
            return "NoRoute"
        if not dst.online:
            return "Offline"
        src_net, dst_net = self.network_of(src_addr), self.network_of(dst_addr)
        if src_net == dst_net:
            return None
        src_kind, dst_kind = self.networks[src_net].kind, self.networks[dst_net].kind
        if ADHOC in (src_kind, dst_kind):
            return "NoUplink"
        if self._partitioned(src_net, dst_net):
            return "Partitioned"
        if dst_kind == PRIVATE:
            if src_kind == PRIVATE or (dst_addr, src_addr) not in self.flows:
                return "NAT"
        return None

    def reachable(self, src: Node, dst: Node) -> bool:
        return src.online and src.address is not None and self.blocked(src.address, dst.address) is None

    def send(self, node: Node, address: str, msg) -> None:
        """Queue ``msg`` from ``node`` to ``address`` subject to reachability."""
        data = encode_message(msg)
        self.sent += 1
        detail = describe(msg)
        if not node.online:
            self.note("drop", node, address, f"SenderOffline {detail}")
            return
        src_net = node.network
        if self.networks[src_net].kind == PRIVATE and self.network_of(address) != src_net:
            self.flows.add((node.address, address))
        reason = self.blocked(node.address, address)
        if reason is None and self.loss > 0 and self.rng.random() < self.loss:
            reason = "Lost"
        if reason is not None:
            self.note("drop", node, address, f"{reason} {detail}")
            return
        delay = self.lan_delay if self.network_of(address) == src_net else self.wan_delay
        self.note("send", node, address, detail)
        self._push(self.clock + delay, "deliver", (node.address, address, data))

    def _push(self, at: int, kind: str, payload: tuple) -> None:
        heapq.heappush(self.queue, SimEvent(at, next(self._order), kind, payload))

    # -- time --------------------------------------------------------------

    def _execute(self, ev: SimEvent) -> None:
        if ev.kind != "deliver":
            raise SimError(f"unknown event kind {ev.kind!r}")
        src_addr, dst_addr, data = ev.payload
        reason = self.blocked(src_addr, dst_addr)
        if reason is not None:
            self.note("drop", src_addr, dst_addr, f"{reason} in flight")
            return
        node = self.live[dst_addr]
        try:
            msg = decode_message(data)
        except EncodingError as exc:
            self.note("drop", src_addr, node, f"Malformed {exc}")
            return
        self.note("deliver", src_addr, node, describe(msg))
        handle_message(self, node, data, src_addr)

    def step(self) -> int:
        """Advance to the next event tick and run every event due then."""
        if not self.queue:
            return 0
        self.clock = max(self.clock, self.queue[0].at)
        n = 0
        while self.queue and self.queue[0].at <= self.clock:
            self._execute(heapq.heappop(self.queue))
            n += 1
        return n

    def run_through(self, tick: int) -> None:
        while self.queue and self.queue[0].at <= tick:
            self.step()
        self.clock = max(self.clock, tick)

    def run_until_idle(self, max_ticks: int = 100_000) -> None:
        deadline = self.clock + max_ticks
        while self.queue and self.queue[0].at <= deadline:
            self.step()

    def wait_until(self, done: Callable[[], bool], deadline: int) -> bool:
        """Run events tick by tick until ``done()`` or the deadline passes."""
        while not done():
            if self.clock >= deadline:
                return False
            nxt = self.queue[0].at if self.queue else deadline
            self.run_through(min(max(nxt, self.clock + 1), deadline))
        return True

    def advance(self, ticks: int) -> None:
        """Let ``ticks`` ticks pass, with periodic neighbour monitoring."""
        end = self.clock + ticks
        while self.clock < end:
            self.run_through(self.clock + 1)
            if self.monitoring and self.clock % self.ping_interval == 0:
                self.monitor_round()
            if self.background_gossip:
                self.background_round()

    def monitor_round(self, nodes: list[Node] | None = None) -> None:
        """Each online node pings the current address of every social neighbour."""
        for node in nodes or self.sorted_nodes():
            if not node.online:
                continue
            for peer in sorted(social_neighbors(node.device)):
                addr = node.table.current.get(peer)
                if addr is not None:
                    self.send(node, addr, LocPing(node.eid, node.address, node.routing.nonce()))

    def background_round(self) -> None:
        """Each online node sends a summary to one random in-scope peer it has an address for."""
        for node in self.sorted_nodes():
            if not node.online:
                continue
            peers = sorted(p for p in replication_scope(node.device.store) if p in node.table.current)
            if not peers:
                continue
            peer = peers[self.rng.randrange(len(peers))]
            self.send(node, node.table.current[peer], Summary(node.eid, wants(node.device.store), reply=True))

    def sorted_nodes(self) -> list[Node]:
        return [self.nodes[n] for n in sorted(self.nodes)]

    # -- topology ----------------------------------------------------------

    def migrate(self, name: str, network: str) -> None:
        node = self.node(name)
        if network not in self.networks:
            raise UnknownNetwork(network)
        if node.network == network:
            return
        old = node.address
        del self.live[old]
        self.networks[node.network].members.discard(node.name)
        self.flows = {f for f in self.flows if old not in f}
        node.routing.channels.clear()
        self._attach(node, network)
        self.note("migrate", node, node.address, f"from {old}")
        if node.online:
            self.monitor_round([node])

    def partition(self, networks) -> None:
        group = frozenset(networks)
        for n in group:
            if n not in self.networks:
                raise UnknownNetwork(n)
        self.partitions.append(group)
        self.note("partition", None, None, ",".join(sorted(group)))

    def heal(self) -> None:
        self.partitions.clear()
        self.note("heal", None, None, "")

    def set_online(self, name: str, online: bool) -> None:
        node = self.node(name)
        node.online = online
        self.note("online" if online else "offline", node, None, "")

    # -- introductions (same LAN) -------------------------------------------

    def introduce(self, a: Node, b: Node) -> None:
        if not (a.online and b.online):
            raise SimError("both devices must be online")
        if a.network != b.network:
            raise SimError(f"{a.name} and {b.name} are not on the same network")
        update_location(a.table, b.eid, b.address)
        update_location(b.table, a.eid, a.address)

    def merge(self, a: str, b: str, *, interrupt: bool = False) -> None:
        na, nb = self.node(a), self.node(b)
        self.introduce(na, nb)
        merge_devices(na.device, nb.device, interrupt=interrupt)
        self.note("merge", na, nb, "interrupted" if interrupt else "")

    def link(self, a: str, name_for_b: str, b: str, name_for_a: str) -> None:
        na, nb = self.node(a), self.node(b)
        self.introduce(na, nb)
        link_users(na.device, name_for_b, nb.device, name_for_a)
        self.note("link", na, nb, f"{name_for_b}/{name_for_a}")

    # -- gossip over the network ---------------------------------------------

    def gossip(self, names: list[str] | None = None, max_passes: int = 8) -> int:
        """Run summary exchanges between in-scope peers until nothing changes.

        Each pass, every selected online node opens (or reuses) a channel to
        each simulated device in its replication scope and sends its wants.
        Returns the number of passes used.
        """
        nodes = [self.node(n) for n in sorted(names)] if names else self.sorted_nodes()
        for n in range(1, max_passes + 1):
            before = [x.device.store.version for x in self.sorted_nodes()]
            for node in nodes:
                if not node.online:
                    continue
                for peer in sorted(replication_scope(node.device.store) - {node.eid}):
                    if peer not in self.devices:
                        continue
                    try:
                        ch = connect(self, node, peer)
                    except ChannelFailed:
                        self.note("gossip-skip", node, self.devices[peer].name, "unreachable")
                        continue
                    send_on(self, node, ch, Summary(node.eid, wants(node.device.store), reply=True))
                    self.run_until_idle()
            if [x.device.store.version for x in self.sorted_nodes()] == before:
                return n
        return max_passes
