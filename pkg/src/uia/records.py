"""Typed change records and append-only, hash-chained device logs."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Union

from .identity import (
    HASH_SIZE,
    ZERO_HASH,
    EID,
    DeviceIdentity,
    EncodingError,
    decode_public_key,
    digest,
    eid_of,
    encode_public_key,
    pack_fields,
    pack_u64,
    sign_record,
    unpack_fields,
    unpack_u64,
    verify_record,
)
from .names import NameSyntaxError, check_label

HEADER_SIZE = 1 + HASH_SIZE + 8 + HASH_SIZE
POINTER_SIZE = HASH_SIZE + 8 + HASH_SIZE


class RecordPointer(NamedTuple):
    """Global reference to a record: (author EID, sequence number, hash)."""

    author: EID
    seq: int
    hash: bytes

    def encode(self) -> bytes:
        return bytes(self.author) + pack_u64(self.seq) + self.hash

    @classmethod
    def decode(cls, data: bytes) -> RecordPointer:
        if len(data) != POINTER_SIZE:
            raise EncodingError("pointer must be 72 bytes")
        return cls(EID(data[:32]), unpack_u64(data[32:40]), bytes(data[40:]))

    def __repr__(self) -> str:
        return f"<{self.author.short()}#{self.seq}:{self.hash.hex()[:6]}>"


# -- record bodies (one class per record type) --------------------------------

@dataclass(frozen=True)
class CreateNamespace:
    TAG = 1


@dataclass(frozen=True)
class Link:
    TAG = 2
    parent: RecordPointer
    child: RecordPointer
    name: str


@dataclass(frozen=True)
class NameDevice:
    TAG = 3
    parent: RecordPointer
    device_eid: EID
    name: str


@dataclass(frozen=True)
class Merge:
    TAG = 4
    local: RecordPointer
    remote: RecordPointer


@dataclass(frozen=True)
class Unlink:
    TAG = 5
    target: RecordPointer


@dataclass(frozen=True)
class RemoveName:
    TAG = 6
    target: RecordPointer


@dataclass(frozen=True)
class StopMerge:
    TAG = 7
    target: RecordPointer
    stop_seq: int
    stop_hash: bytes


RecordBody = Union[CreateNamespace, Link, NameDevice, Merge, Unlink, RemoveName, StopMerge]
BODY_TYPES = {cls.TAG: cls for cls in (CreateNamespace, Link, NameDevice, Merge, Unlink, RemoveName, StopMerge)}


class MalformedRecord(ValueError):
    pass


def _body_fields(body: RecordBody) -> list[bytes]:
    if isinstance(body, CreateNamespace):
        return []
    if isinstance(body, Link):
        return [body.parent.encode(), body.child.encode(), body.name.encode("utf-8")]
    if isinstance(body, NameDevice):
        return [body.parent.encode(), bytes(body.device_eid), body.name.encode("utf-8")]
    if isinstance(body, Merge):
        return [body.local.encode(), body.remote.encode()]
    if isinstance(body, (Unlink, RemoveName)):
        return [body.target.encode()]
    if isinstance(body, StopMerge):
        return [body.target.encode(), pack_u64(body.stop_seq), body.stop_hash]
    raise TypeError(f"not a record body: {body!r}")


def _decode_label(raw: bytes) -> str:
    try:
        return check_label(raw.decode("ascii"))
    except (UnicodeDecodeError, NameSyntaxError) as exc:
        raise EncodingError(f"bad label: {exc}") from None


def _body_from_fields(tag: int, fields: list[bytes]) -> RecordBody:
    cls = BODY_TYPES.get(tag)
    if cls is None:
        raise EncodingError(f"unknown record type {tag}")
    expected = {1: 0, 2: 3, 3: 3, 4: 2, 5: 1, 6: 1, 7: 3}[tag]
    if len(fields) != expected:
        raise EncodingError(f"record type {tag} takes {expected} fields, got {len(fields)}")
    ptr = RecordPointer.decode
    if cls is CreateNamespace:
        return CreateNamespace()
    if cls is Link:
        return Link(ptr(fields[0]), ptr(fields[1]), _decode_label(fields[2]))
    if cls is NameDevice:
        if len(fields[1]) != HASH_SIZE:
            raise EncodingError("device EID must be 32 bytes")
        return NameDevice(ptr(fields[0]), EID(fields[1]), _decode_label(fields[2]))
    if cls is Merge:
        return Merge(ptr(fields[0]), ptr(fields[1]))
    if cls in (Unlink, RemoveName):
        return cls(ptr(fields[0]))
    if len(fields[2]) != HASH_SIZE:
        raise EncodingError("stop hash must be 32 bytes")
    return StopMerge(ptr(fields[0]), unpack_u64(fields[1]), bytes(fields[2]))


def encode_body(body: RecordBody) -> bytes:
    return bytes([body.TAG]) + pack_fields(_body_fields(body))


def decode_body(data: bytes) -> RecordBody:
    if not data:
        raise EncodingError("empty body")
    return _body_from_fields(data[0], unpack_fields(data, 1))


def canonical_encode(value: RecordBody | bytes) -> bytes:
    """Canonical bytes of a record body or of a raw 32-byte public key."""
    if isinstance(value, (bytes, bytearray)):
        return encode_public_key(bytes(value))
    return encode_body(value)


def canonical_decode(data: bytes) -> RecordBody | bytes:
    if data and data[0] == 0x10:
        return decode_public_key(data)
    return decode_body(data)


def encode_payload(author: EID, seq: int, prev_hash: bytes, body: RecordBody) -> bytes:
    return (
        bytes([body.TAG])
        + bytes(author)
        + pack_u64(seq)
        + prev_hash
        + pack_fields(_body_fields(body))
    )


def check_body(body: RecordBody, author: EID | None = None) -> None:
    """Structural validation that needs no other records."""
    if isinstance(body, (Link, NameDevice)):
        try:
            check_label(body.name)
        except NameSyntaxError as exc:
            raise MalformedRecord(str(exc)) from exc
    if isinstance(body, Merge):
        if body.local == body.remote:
            raise MalformedRecord("merge local and remote pointers must differ")
        if author is not None and body.local.author != author:
            raise MalformedRecord("merge local pointer must name the author's own namespace")
    if isinstance(body, StopMerge):
        if len(body.stop_hash) != HASH_SIZE:
            raise MalformedRecord("stop hash must be 32 bytes")


# -- records ------------------------------------------------------------------

@dataclass(frozen=True)
class Record:
    author: EID
    seq: int
    prev_hash: bytes
    body: RecordBody
    hash: bytes
    signature: bytes = field(repr=False)

    def payload(self) -> bytes:
        return self._payload

    @cached_property
    def _payload(self) -> bytes:
        return encode_payload(self.author, self.seq, self.prev_hash, self.body)

    @cached_property
    def pointer(self) -> RecordPointer:
        return RecordPointer(self.author, self.seq, self.hash)

    def encode(self) -> bytes:
        """Wire form: payload and signature, each length-prefixed."""
        return pack_fields([self.payload(), self.signature])

    @classmethod
    def decode(cls, data: bytes) -> Record:
        fields = unpack_fields(data)
        if len(fields) != 2:
            raise EncodingError("record needs payload and signature")
        return decode_record(fields[0], fields[1])


def decode_record(payload: bytes, signature: bytes) -> Record:
    if len(payload) < HEADER_SIZE:
        raise EncodingError("record payload too short")
    tag = payload[0]
    author = EID(payload[1:33])
    (seq,) = struct.unpack(">Q", payload[33:41])
    prev_hash = bytes(payload[41:73])
    body = _body_from_fields(tag, unpack_fields(payload, HEADER_SIZE))
    return Record(author, seq, prev_hash, body, digest(payload), bytes(signature))


def pointer_of(record: Record) -> RecordPointer:
    return record.pointer


def pointer_matches(pointer: RecordPointer, record: Record) -> bool:
    return pointer == record.pointer


# -- logs ---------------------------------------------------------------------

class ChainError(Exception):
    """``kind`` is Gap, HashMismatch, BadSignature or Fork."""

    def __init__(self, kind: str, index: int, seq: int):
        self.kind = kind
        self.index = index
        self.seq = seq
        super().__init__(f"{kind} at seq {seq} (index {index})")


class DeviceLog:
    """One author's records, sequence numbers 0..n-1 without gaps."""

    def __init__(self, author: EID, records: list[Record] | None = None):
        self.author = EID(author)
        self.records: list[Record] = list(records or [])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records)

    def __getitem__(self, seq: int) -> Record:
        return self.records[seq]

    def __repr__(self) -> str:
        return f"DeviceLog({self.author.short()}, {len(self.records)} records)"

    @property
    def head_hash(self) -> bytes:
        return self.records[-1].hash if self.records else ZERO_HASH

    def _push(self, record: Record) -> None:
        if record.author != self.author or record.seq != len(self.records):
            raise ValueError("record does not extend this log")
        if record.prev_hash != self.head_hash:
            raise ValueError("record does not chain onto this log")
        self.records.append(record)


def make_record(identity: DeviceIdentity, seq: int, prev_hash: bytes, body: RecordBody) -> Record:
    payload = encode_payload(identity.eid, seq, prev_hash, body)
    return Record(identity.eid, seq, prev_hash, body, digest(payload), sign_record(identity, payload))


def append_record(log: DeviceLog, identity: DeviceIdentity, body: RecordBody) -> Record:
    if identity.eid != log.author:
        raise PermissionError("identity does not own this log")
    check_body(body, identity.eid)
    record = make_record(identity, len(log), log.head_hash, body)
    log._push(record)
    return record


def verify_chain(records: list[Record], public_key: bytes, anchor_hash: bytes | None = None) -> None:
    """Raise ChainError at the first record that breaks the chain.

    Checks run hash, then signature, then sequence continuity, then the
    back-link, so a field altered in place is always caught at its own index.
    ``anchor_hash`` is the trusted hash preceding a list that does not start
    at seq 0.
    """
    if not records:
        return
    first_seq = records[0].seq
    author = records[0].author
    seen: dict[int, bytes] = {}
    for index, rec in enumerate(records):
        if digest(rec.payload()) != rec.hash or rec.author != author:
            raise ChainError("HashMismatch", index, rec.seq)
        if not verify_record(public_key, rec.payload(), rec.signature):
            raise ChainError("BadSignature", index, rec.seq)
        expected = first_seq + index
        if rec.seq != expected:
            if rec.seq in seen and seen[rec.seq] != rec.hash:
                raise ChainError("Fork", index, rec.seq)
            raise ChainError("Gap", index, rec.seq)
        if index == 0:
            want = ZERO_HASH if rec.seq == 0 else anchor_hash
        else:
            want = records[index - 1].hash
        if want is not None and rec.prev_hash != want:
            raise ChainError("HashMismatch", index, rec.seq)
        seen[rec.seq] = rec.hash


def check_chain(records: list[Record], public_key: bytes) -> ChainError | None:
    try:
        verify_chain(records, public_key)
    except ChainError as exc:
        return exc
    return None


# -- archive ------------------------------------------------------------------

def dump_archive(log: DeviceLog, public_key: bytes) -> bytes:
    """Public key, then each record's payload and signature, all length-prefixed."""
    parts = [encode_public_key(public_key)]
    for rec in log:
        parts += [rec.payload(), rec.signature]
    return pack_fields(parts)


def load_archive(data: bytes) -> tuple[bytes, DeviceLog]:
    fields = unpack_fields(data)
    if not fields or len(fields) % 2 != 1:
        raise EncodingError("archive must hold a key and payload/signature pairs")
    public_key = decode_public_key(fields[0])
    records = [decode_record(fields[i], fields[i + 1]) for i in range(1, len(fields), 2)]
    verify_chain(records, public_key)
    if records and records[0].seq != 0:
        raise ChainError("Gap", 0, records[0].seq)
    author = eid_of(public_key)
    if records and records[0].author != author:
        raise ChainError("BadSignature", 0, records[0].seq)
    return public_key, DeviceLog(author, records)
