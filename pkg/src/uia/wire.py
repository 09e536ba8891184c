"""Simulated wire messages, encoded with the canonical TLV scheme.

Every message starts with the sender's EID so handlers know who spoke even
when the packet arrived through a relay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .identity import (
    EID,
    EncodingError,
    decode_tlv,
    encode_tlv,
    pack_fields,
    pack_list,
    pack_u64,
    unpack_fields,
    unpack_list,
    unpack_u64,
)
from .records import Record

Hop = tuple[EID, str]


def _pack_str(s: str) -> bytes:
    return s.encode("utf-8")


def _pack_path(path: list[Hop]) -> bytes:
    return pack_list([pack_fields([bytes(e), _pack_str(a)]) for e, a in path])


def _unpack_path(data: bytes) -> list[Hop]:
    out = []
    for item in unpack_list(data):
        e, a = unpack_fields(item)
        out.append((EID(e), a.decode("utf-8")))
    return out


@dataclass(frozen=True)
class Summary:
    TAG = 0x20
    sender: EID
    entries: dict = field(default_factory=dict)
    reply: bool = False

    def fields(self):
        items = [bytes(a) + pack_u64(n) for a, n in sorted(self.entries.items())]
        return [pack_list(items), b"\x01" if self.reply else b"\x00"]

    @classmethod
    def parse(cls, sender, f):
        entries = {}
        for item in unpack_list(f[0]):
            if len(item) != 40:
                raise EncodingError("bad summary entry")
            entries[EID(item[:32])] = unpack_u64(item[32:])
        return cls(sender, entries, f[1] == b"\x01")


@dataclass(frozen=True)
class Request:
    TAG = 0x21
    sender: EID
    author: EID
    from_seq: int

    def fields(self):
        return [bytes(self.author), pack_u64(self.from_seq)]

    @classmethod
    def parse(cls, sender, f):
        return cls(sender, EID(f[0]), unpack_u64(f[1]))


@dataclass(frozen=True)
class Records:
    TAG = 0x22
    sender: EID
    records: tuple = ()
    keys: dict = field(default_factory=dict)

    def fields(self):
        recs = pack_list([r.encode() for r in self.records])
        keys = pack_list([bytes(e) + k for e, k in sorted(self.keys.items())])
        return [recs, keys]

    @classmethod
    def parse(cls, sender, f):
        recs = tuple(Record.decode(b) for b in unpack_list(f[0]))
        keys = {}
        for item in unpack_list(f[1]):
            if len(item) != 64:
                raise EncodingError("bad key entry")
            keys[EID(item[:32])] = bytes(item[32:])
        return cls(sender, recs, keys)


@dataclass(frozen=True)
class Search:
    TAG = 0x30
    sender: EID
    qid: bytes
    origin: EID
    target: EID
    ttl: int
    path: tuple = ()

    def fields(self):
        return [self.qid, bytes(self.origin), bytes(self.target), pack_u64(self.ttl), _pack_path(list(self.path))]

    @classmethod
    def parse(cls, sender, f):
        return cls(sender, bytes(f[0]), EID(f[1]), EID(f[2]), unpack_u64(f[3]), tuple(_unpack_path(f[4])))


@dataclass(frozen=True)
class Found:
    TAG = 0x31
    sender: EID
    qid: bytes
    path: tuple = ()
    address: str = ""

    def fields(self):
        return [self.qid, _pack_path(list(self.path)), _pack_str(self.address)]

    @classmethod
    def parse(cls, sender, f):
        return cls(sender, bytes(f[0]), tuple(_unpack_path(f[1])), f[2].decode("utf-8"))


@dataclass(frozen=True)
class RelayOpen:
    TAG = 0x32
    sender: EID
    target: EID
    target_address: str

    def fields(self):
        return [bytes(self.target), _pack_str(self.target_address)]

    @classmethod
    def parse(cls, sender, f):
        return cls(sender, EID(f[0]), f[1].decode("utf-8"))


@dataclass(frozen=True)
class RelayData:
    TAG = 0x33
    sender: EID
    src: EID
    dst: EID
    payload: bytes

    def fields(self):
        return [bytes(self.src), bytes(self.dst), self.payload]

    @classmethod
    def parse(cls, sender, f):
        return cls(sender, EID(f[0]), EID(f[1]), bytes(f[2]))


@dataclass(frozen=True)
class LocPing:
    TAG = 0x34
    sender: EID
    address: str
    nonce: int = 0

    def fields(self):
        return [_pack_str(self.address), pack_u64(self.nonce)]

    @classmethod
    def parse(cls, sender, f):
        return cls(sender, f[0].decode("utf-8"), unpack_u64(f[1]))


@dataclass(frozen=True)
class LocPong(LocPing):
    TAG = 0x35


@dataclass(frozen=True)
class Echo:
    TAG = 0x36
    sender: EID
    payload: bytes
    reply: bool = False

    def fields(self):
        return [self.payload, b"\x01" if self.reply else b"\x00"]

    @classmethod
    def parse(cls, sender, f):
        return cls(sender, bytes(f[0]), f[1] == b"\x01")


MESSAGE_TYPES = {c.TAG: c for c in (Summary, Request, Records, Search, Found, RelayOpen, RelayData, LocPing, LocPong, Echo)}
MESSAGE_NAMES = {
    Summary: "SUMMARY", Request: "REQUEST", Records: "RECORDS", Search: "SEARCH", Found: "FOUND",
    RelayOpen: "RELAY_OPEN", RelayData: "RELAY_DATA", LocPing: "LOC_PING", LocPong: "LOC_PONG", Echo: "ECHO",
}


def encode_message(msg) -> bytes:
    return encode_tlv(msg.TAG, [bytes(msg.sender)] + msg.fields())


def decode_message(data: bytes):
    tag, fields = decode_tlv(data)
    cls = MESSAGE_TYPES.get(tag)
    if cls is None or not fields:
        raise EncodingError(f"unknown message type {tag:#x}")
    try:
        return cls.parse(EID(fields[0]), fields[1:])
    except (IndexError, ValueError) as exc:
        raise EncodingError(f"malformed {MESSAGE_NAMES[cls]}: {exc}") from None


def describe(msg) -> str:
    """Short deterministic summary for trace lines."""
    name = MESSAGE_NAMES[type(msg)]
    if isinstance(msg, Summary):
        return f"{name} entries={len(msg.entries)}{' reply' if msg.reply else ''}"
    if isinstance(msg, Records):
        return f"{name} n={len(msg.records)}"
    if isinstance(msg, Request):
        return f"{name} {msg.author.short()}@{msg.from_seq}"
    if isinstance(msg, Search):
        return f"{name} q={msg.qid.hex()[:8]} ttl={msg.ttl} hops={len(msg.path)}"
    if isinstance(msg, Found):
        return f"{name} q={msg.qid.hex()[:8]} hops={len(msg.path)}"
    if isinstance(msg, RelayData):
        return f"{name} {msg.src.short()}->{msg.dst.short()} [{describe(decode_message(msg.payload))}]"
    if isinstance(msg, RelayOpen):
        return f"{name} {msg.target.short()}"
    if isinstance(msg, (LocPing, LocPong)):
        return f"{name} {msg.address} n={msg.nonce}"
    return f"{name} {len(msg.payload)}B{' reply' if msg.reply else ''}"
