import pytest

from helpers import device, full_sync
from uia.actions import create_group, link_users, merge_devices, name_device
from uia.names import NameSyntaxError, parse_name
from uia.resolver import (
    Ambiguous,
    DeviceResult,
    NamespaceResult,
    NotFound,
    TypeMismatch,
    resolve,
)


def test_parse_examples():
    assert parse_name("PC.Alice").labels == ("PC", "Alice")
    assert parse_name("phone").labels == ("phone",)


def test_parse_empty_label_position():
    with pytest.raises(NameSyntaxError) as err:
        parse_name("a..b")
    assert err.value.kind == "EmptyLabel"
    assert err.value.position == 2


def test_parse_bad_character_and_length():
    with pytest.raises(NameSyntaxError) as err:
        parse_name("Alice Smith")
    assert err.value.kind == "BadCharacter"
    with pytest.raises(NameSyntaxError) as err:
        parse_name(".".join(["a" * 63] * 5))
    assert err.value.kind == "TooLong"


@pytest.fixture
def bob_and_alice():
    laptop, phone, cell = device("laptop"), device("phone"), device("cell", "phone")
    ipod, pc = device("ipod"), device("pc", "PC")
    merge_devices(ipod, pc)
    merge_devices(laptop, phone)
    link_users(cell, "Alice", ipod, "Bob")
    full_sync(cell, ipod, pc)
    merge_devices(cell, phone)
    full_sync(laptop, phone, cell, ipod, pc)
    return laptop, phone, cell, ipod, pc


def test_figure_resolutions(bob_and_alice):
    laptop, phone, cell, ipod, pc = bob_and_alice
    assert ipod.resolve("laptop.Bob") == DeviceResult(laptop.eid)
    assert cell.resolve("PC.Alice") == DeviceResult(pc.eid)
    with pytest.raises(Ambiguous) as err:
        laptop.resolve("phone")
    assert err.value.targets == frozenset([phone.eid, cell.eid])
    assert laptop.resolve("laptop") == DeviceResult(laptop.eid)


def test_case_insensitive(bob_and_alice):
    laptop, *_ , pc = bob_and_alice
    assert laptop.resolve("pc.alice") == laptop.resolve("PC.Alice") == DeviceResult(pc.eid)


def test_namespace_as_final_result(bob_and_alice):
    laptop, _, _, ipod, _ = bob_and_alice
    res = laptop.resolve("Alice")
    assert isinstance(res, NamespaceResult)
    assert ipod.root in res.cls.members


def test_device_before_final_label_is_type_mismatch(bob_and_alice):
    laptop = bob_and_alice[0]
    with pytest.raises(TypeMismatch):
        laptop.resolve("x.laptop")


def test_missing_label_not_found(bob_and_alice):
    laptop = bob_and_alice[0]
    with pytest.raises(NotFound) as err:
        laptop.resolve("printer")
    assert err.value.label == "printer"
    with pytest.raises(NotFound):
        laptop.resolve("nobody.Alice")


def test_right_to_left_composition(bob_and_alice):
    laptop = bob_and_alice[0]
    view = laptop.view()
    outer = resolve(view, laptop.root_class(), parse_name("Alice"))
    inner = resolve(view, outer.cls, parse_name("PC"))
    assert inner == laptop.resolve("PC.Alice")


def test_conflict_leaves_other_labels_alone(bob_and_alice):
    laptop = bob_and_alice[0]
    before = {n: laptop.resolve(n) for n in ("laptop", "PC.Alice", "Alice")}
    name_device(laptop, laptop.root, "laptop", bob_and_alice[3].eid)
    with pytest.raises(Ambiguous):
        laptop.resolve("laptop")
    assert {n: laptop.resolve(n) for n in ("PC.Alice", "Alice")} == {
        n: before[n] for n in ("PC.Alice", "Alice")
    }


def test_cycles_are_harmless(bob_and_alice):
    laptop, _, _, _, pc = bob_and_alice
    assert laptop.resolve("PC.Alice.Bob.Alice") == DeviceResult(pc.eid)


def test_group_names(bob_and_alice):
    devs = [device(f"g{i}") for i in range(3)]
    create_group(devs, "home")
    printer = device("printer")
    ns = devs[1].resolve("home").cls
    own = min(p for p in ns.members if p.author == devs[1].eid)
    name_device(devs[1], own, "printer", printer.eid)
    full_sync(*devs)
    for d in devs:
        assert d.resolve("printer.home") == DeviceResult(printer.eid)
