import itertools
import random

from helpers import LogBuilder, device, ident, random_log
from uia.actions import link_users, merge_devices
from uia.identity import generate_identity
from uia.records import CreateNamespace, Merge, NameDevice, StopMerge
from uia.replication import (
    RecordStore,
    gossip_round,
    handle_gossip,
    ingest,
    replication_scope,
    summarize,
    sync_all,
    wants,
)
from uia.wire import Records, Summary, decode_message, encode_message


def empty_store(seed="watcher"):
    w = generate_identity(seed)
    return RecordStore(w.eid, w.public_key)


def test_summary_of_own_log():
    d = device("own")
    assert summarize(d.store).entries == {d.eid: 2}


def test_summary_counts_ingested_records():
    x = generate_identity("x")
    recs = random_log(x, 11, random.Random(1))
    s = empty_store()
    ingest(s, recs[:3], {x.eid: x.public_key})
    before = summarize(s).entries[x.eid]
    ingest(s, recs[3:7])
    assert summarize(s).entries[x.eid] == before + 4


def test_two_logs_two_entries():
    a, b = generate_identity("a"), generate_identity("b")
    s = empty_store()
    ingest(s, random_log(a, 3, random.Random(2)) + random_log(b, 7, random.Random(3)),
           {a.eid: a.public_key, b.eid: b.public_key})
    entries = summarize(s).entries
    assert entries[a.eid] == 3 and entries[b.eid] == 7


def test_out_of_order_records_accepted():
    x = generate_identity("x")
    recs = random_log(x, 3, random.Random(4))
    s = empty_store()
    report = ingest(s, [recs[2], recs[0], recs[1]], {x.eid: x.public_key})
    assert sorted(report.accepted) == sorted(r.pointer for r in recs)
    assert list(s.logs[x.eid]) == recs


def test_every_permutation_gives_same_store():
    x, y = generate_identity("x"), generate_identity("y")
    recs = random_log(x, 3, random.Random(5)) + random_log(y, 3, random.Random(6))
    keys = {x.eid: x.public_key, y.eid: y.public_key}
    expected = None
    for perm in itertools.permutations(recs):
        s = empty_store()
        for r in perm:
            ingest(s, [r], keys)
        got = {a: list(l) for a, l in s.logs.items()}
        expected = expected or got
        assert got == expected


def test_bad_signature_rejected_store_unchanged():
    x = generate_identity("x")
    recs = random_log(x, 6, random.Random(7))
    from dataclasses import replace

    s = empty_store()
    ingest(s, recs[:5], {x.eid: x.public_key})
    before = s.version
    report = ingest(s, [replace(recs[5], signature=bytes(64))])
    assert report.reasons() == ["BadSignature"]
    assert len(s.logs[x.eid]) == 5 and s.version == before


def test_unknown_key_buffers_until_key_arrives():
    x = generate_identity("x")
    recs = random_log(x, 3, random.Random(8))
    s = empty_store()
    report = ingest(s, recs)
    assert len(report.buffered) == 3
    report = ingest(s, [], {x.eid: x.public_key})
    assert len(report.accepted) == 3


def test_wrong_key_for_eid_is_refused():
    x = generate_identity("x")
    s = empty_store()
    report = ingest(s, [], {x.eid: generate_identity("y").public_key})
    assert report.reasons() == ["BadKey"]


def test_duplicates_are_ignored():
    x = generate_identity("x")
    recs = random_log(x, 4, random.Random(9))
    s = empty_store()
    ingest(s, recs, {x.eid: x.public_key})
    report = ingest(s, recs)
    assert report.duplicates == 4 and not report.changed


def _revoked_cluster():
    b = LogBuilder()
    x, y = ident(0), ident(1)
    rx = b.add(x, CreateNamespace()).pointer
    ry = b.add(y, CreateNamespace()).pointer
    b.add(x, Merge(rx, ry))
    b.add(y, Merge(ry, rx))
    for i in range(2):
        b.add(y, NameDevice(ry, y.eid, f"n{i}"))
    cut = b.logs[y.eid][3]
    stop = b.add(x, StopMerge(cut.pointer, cut.seq, cut.hash))
    late = [b.add(y, NameDevice(ry, y.eid, f"late{i}")) for i in range(3)]
    return b, x, y, stop, late


def test_records_beyond_cut_rejected():
    b, x, y, stop, late = _revoked_cluster()
    s = b.store(x, [r for r in b.order if r not in late])
    report = ingest(s, late)
    assert report.reasons() == ["BeyondStop"] * 3
    assert s.visible_limit(y.eid) == 3


def test_late_stop_merge_quarantines_stored_records():
    b, x, y, stop, late = _revoked_cluster()
    s = b.store(x, [r for r in b.order if r is not stop])
    assert "late0" in {lbl for (_, lbl) in s.view().bindings}
    ingest(s, [stop])
    assert not {"late0", "late1", "late2"} & {lbl for (_, lbl) in s.view().bindings}
    # nothing beyond the cut is ever offered to peers
    recs, _ = __import__("uia.replication", fromlist=["records_for"]).records_for(s, {y.eid: 0})
    assert max(r.seq for r in recs) == 3


def test_one_way_catch_up_and_disjoint_halves():
    x = generate_identity("x")
    recs = random_log(x, 10, random.Random(10))
    a, b = empty_store("a"), empty_store("b")
    ingest(a, recs, {x.eid: x.public_key})
    gossip_round(a, b, scope_b={b.owner, x.eid})
    assert list(b.logs[x.eid]) == recs

    a, b = empty_store("a"), empty_store("b")
    ingest(a, recs[:5], {x.eid: x.public_key})
    ingest(b, recs[5:], {x.eid: x.public_key})
    scope = {x.eid}
    gossip_round(a, b, scope_a=scope | {a.owner}, scope_b=scope | {b.owner})
    assert list(a.logs[x.eid]) == recs == list(b.logs[x.eid])


def test_lone_device_scope_is_itself():
    d = device("lone")
    assert replication_scope(d.store) == {d.eid}


def test_scope_covers_linked_clusters_not_beyond():
    a, b, c = device("a"), device("b"), device("c")
    link_users(a, "B", b, "A")
    link_users(b, "C", c, "B")
    sync_all([a.store, b.store, c.store])
    scope = replication_scope(a.store)
    assert {a.eid, b.eid} <= scope
    assert c.eid not in scope
    assert c.eid not in a.store.logs


def test_scope_covers_whole_linked_cluster():
    laptop, phone, cell = device("laptop"), device("phone"), device("cell", "phone")
    ipod, pc = device("ipod"), device("pc", "PC")
    merge_devices(ipod, pc)
    merge_devices(laptop, phone)
    link_users(cell, "Alice", ipod, "Bob")
    merge_devices(cell, phone)
    sync_all([d.store for d in (laptop, phone, cell, ipod, pc)])
    assert replication_scope(laptop.store) == {d.eid for d in (laptop, phone, cell, ipod, pc)}
    assert ipod.eid in laptop.store.logs and pc.eid in laptop.store.logs


def test_wants_stop_at_cut():
    b, x, y, stop, late = _revoked_cluster()
    s = b.store(x, [r for r in b.order if r not in late])
    assert y.eid not in wants(s)


def test_gossip_messages_round_trip_and_handle():
    a, b = device("a"), device("b")
    link_users(a, "B", b, "A")
    out = []
    msg = Summary(b.eid, wants(b.store), reply=True)
    assert decode_message(encode_message(msg)) == msg
    handle_gossip(a.store, msg, out.append, a.eid)
    assert any(isinstance(m, Records) for m in out) or any(isinstance(m, Summary) for m in out)
    for m in out:
        assert decode_message(encode_message(m)) == m
