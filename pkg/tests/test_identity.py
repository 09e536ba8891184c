import hashlib
import random

import pytest
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from uia.identity import (
    EID,
    EncodingError,
    decode_public_key,
    decode_tlv,
    encode_public_key,
    encode_tlv,
    eid_of,
    generate_identity,
    pack_fields,
    random_identity,
    sign_record,
    unpack_fields,
    verify_record,
)


def test_distinct_seeds_distinct_eids():
    assert generate_identity(1).eid != generate_identity(2).eid


def test_same_seed_same_identity():
    a, b = generate_identity(1), generate_identity(1)
    assert a.eid == b.eid
    assert a.public_key == b.public_key


def test_eid_is_hash_of_encoded_key_recomputed_independently():
    for seed in range(20):
        ident = generate_identity(seed)
        # independent recomputation: tag 0x10, one 4-byte length-prefixed field
        encoded = bytes([0x10]) + len(ident.public_key).to_bytes(4, "big") + ident.public_key
        assert ident.eid == hashlib.sha256(encoded).digest()


def test_public_key_matches_private_key():
    ident = generate_identity("k")
    pub = Ed25519PrivateKey.from_private_bytes(ident.private_key).public_key()
    assert pub.public_bytes(Encoding.Raw, PublicFormat.Raw) == ident.public_key


def test_random_identities_differ():
    assert random_identity().eid != random_identity().eid


def test_eid_requires_32_bytes():
    with pytest.raises(ValueError):
        EID(b"short")


def test_eid_orders_bytewise():
    lo, hi = EID(bytes(31) + b"\x01"), EID(b"\x01" + bytes(31))
    assert lo < hi
    assert sorted([hi, lo]) == [lo, hi]


def test_sign_verify_round_trip():
    ident = generate_identity(3)
    sig = sign_record(ident, b"payload")
    assert verify_record(ident.public_key, b"payload", sig)


def test_verify_with_other_key_rejects():
    a, b = generate_identity(3), generate_identity(4)
    assert not verify_record(b.public_key, b"payload", sign_record(a, b"payload"))


def test_bit_flips_reject():
    ident = generate_identity(5)
    payload = bytes(range(256)) * 2
    sig = sign_record(ident, payload)
    rng = random.Random(0)
    for pos in rng.sample(range(len(payload) * 8), 100):
        flipped = bytearray(payload)
        flipped[pos // 8] ^= 1 << (pos % 8)
        assert not verify_record(ident.public_key, bytes(flipped), sig)


def test_garbage_signature_rejects_without_raising():
    ident = generate_identity(6)
    assert not verify_record(ident.public_key, b"x", b"not a signature")


def test_public_key_encoding_round_trip():
    ident = generate_identity(7)
    enc = encode_public_key(ident.public_key)
    assert enc[0] == 0x10
    assert decode_public_key(enc) == ident.public_key
    assert eid_of(ident.public_key) == ident.eid


def test_decode_public_key_rejects_other_tags():
    with pytest.raises(EncodingError):
        decode_public_key(encode_tlv(0x11, [bytes(32)]))


def test_tlv_round_trip_random():
    rng = random.Random(1)
    for _ in range(200):
        fields = [rng.randbytes(rng.randrange(0, 40)) for _ in range(rng.randrange(0, 6))]
        tag = rng.randrange(256)
        assert decode_tlv(encode_tlv(tag, fields)) == (tag, fields)


def test_truncated_fields_raise():
    data = pack_fields([b"abc", b"defg"])
    boundary = 4 + 3
    for cut in range(1, len(data)):
        if cut == boundary:
            assert unpack_fields(data[:cut]) == [b"abc"]
            continue
        with pytest.raises(EncodingError):
            unpack_fields(data[:cut])
