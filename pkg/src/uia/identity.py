"""Device identities, endpoint identifiers and the canonical byte encoding.

Every device owns an Ed25519 key pair.  Its endpoint identifier (EID) is the
SHA-256 digest of the canonical encoding of the public key, so a peer that
holds the key can always check the binding itself.

The canonical encoding is a plain tag-length-value scheme: one type byte,
then fields that are each prefixed with a 4-byte big-endian length.  The same
primitives are reused for log records and for simulated wire messages.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import (
    Encoding,
    NoEncryption,
    PrivateFormat,
    PublicFormat,
)

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)
PUBLIC_KEY_TAG = 0x10


class EncodingError(ValueError):
    """Raised when a byte string is not a valid canonical encoding."""


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class EID(bytes):
    """A 32-byte endpoint identifier.

    Behaves like ``bytes`` (hashable, ordered lexicographically) but refuses
    any other length.
    """

    def __new__(cls, value: bytes) -> EID:
        if isinstance(value, EID):
            return value
        if len(value) != HASH_SIZE:
            raise ValueError(f"EID must be {HASH_SIZE} bytes, got {len(value)}")
        return super().__new__(cls, value)

    def short(self) -> str:
        return self.hex()[:8]

    def __repr__(self) -> str:
        return f"EID({self.short()})"


# -- length-prefixed field packing -------------------------------------------

def pack_u32(n: int) -> bytes:
    return struct.pack(">I", n)


def pack_u64(n: int) -> bytes:
    if n < 0:
        raise EncodingError("negative integer")
    return struct.pack(">Q", n)


def unpack_u64(data: bytes) -> int:
    if len(data) != 8:
        raise EncodingError("u64 field must be 8 bytes")
    return struct.unpack(">Q", data)[0]


def pack_fields(fields: list[bytes] | tuple[bytes, ...]) -> bytes:
    return b"".join(pack_u32(len(f)) + f for f in fields)


def unpack_fields(data: bytes, offset: int = 0) -> list[bytes]:
    out = []
    while offset < len(data):
        if offset + 4 > len(data):
            raise EncodingError("truncated length prefix")
        (n,) = struct.unpack_from(">I", data, offset)
        offset += 4
        if offset + n > len(data):
            raise EncodingError("truncated field")
        out.append(data[offset:offset + n])
        offset += n
    return out


def encode_tlv(tag: int, fields: list[bytes] | tuple[bytes, ...]) -> bytes:
    return bytes([tag]) + pack_fields(fields)


def decode_tlv(data: bytes) -> tuple[int, list[bytes]]:
    if not data:
        raise EncodingError("empty encoding")
    return data[0], unpack_fields(data, 1)


def pack_list(items: list[bytes]) -> bytes:
    """Nested list of byte strings, as a single field value."""
    return pack_u32(len(items)) + pack_fields(items)


def unpack_list(data: bytes) -> list[bytes]:
    if len(data) < 4:
        raise EncodingError("truncated list")
    (count,) = struct.unpack_from(">I", data, 0)
    items = unpack_fields(data, 4)
    if len(items) != count:
        raise EncodingError("list count mismatch")
    return items


# -- keys and identities ------------------------------------------------------

def encode_public_key(public_key: bytes) -> bytes:
    return encode_tlv(PUBLIC_KEY_TAG, [public_key])


def decode_public_key(data: bytes) -> bytes:
    tag, fields = decode_tlv(data)
    if tag != PUBLIC_KEY_TAG or len(fields) != 1 or len(fields[0]) != 32:
        raise EncodingError("not a public key encoding")
    return fields[0]


@lru_cache(maxsize=4096)
def eid_of(public_key: bytes) -> EID:
    return EID(digest(encode_public_key(public_key)))


@dataclass(frozen=True)
class DeviceIdentity:
    private_key: bytes = field(repr=False)
    public_key: bytes
    eid: EID

    @classmethod
    def from_private_bytes(cls, raw: bytes) -> DeviceIdentity:
        key = Ed25519PrivateKey.from_private_bytes(raw)
        pub = key.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(raw, pub, eid_of(pub))


def generate_identity(seed: int | str | bytes | None = None) -> DeviceIdentity:
    """Create a device key pair.

    With a seed the key is derived deterministically (the simulator relies on
    this); without one it comes from the OS entropy pool.
    """
    if seed is None:
        key = Ed25519PrivateKey.generate()
        raw = key.private_bytes(Encoding.Raw, PrivateFormat.Raw, NoEncryption())
        return DeviceIdentity.from_private_bytes(raw)
    if isinstance(seed, int):
        seed = str(seed)
    if isinstance(seed, str):
        seed = seed.encode()
    return DeviceIdentity.from_private_bytes(digest(b"uia-identity\x00" + seed))


def random_identity() -> DeviceIdentity:
    return generate_identity(os.urandom(32))


# -- signatures ---------------------------------------------------------------

@lru_cache(maxsize=4096)
def _signing_key(private_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(private_key)


@lru_cache(maxsize=4096)
def _verifying_key(public_key: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public_key)


def sign_record(identity: DeviceIdentity, payload: bytes) -> bytes:
    return _signing_key(identity.private_key).sign(payload)


@lru_cache(maxsize=65536)
def verify_record(public_key: bytes, payload: bytes, signature: bytes) -> bool:
    """Check an Ed25519 signature; rejection is returned, never raised.

    Results are memoised because replicas re-verify the same records many
    times during gossip.
    """
    try:
        _verifying_key(public_key).verify(signature, payload)
    except (InvalidSignature, ValueError):
        return False
    return True
