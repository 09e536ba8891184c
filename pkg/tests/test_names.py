import pytest

from uia.names import NameSyntaxError, check_label, is_valid_label, normalize_label, parse_name


def test_dotted_name_keeps_written_order():
    assert parse_name("PC.Alice").labels == ("PC", "Alice")


def test_single_label():
    assert parse_name("phone").labels == ("phone",)


def test_empty_label_reports_position():
    with pytest.raises(NameSyntaxError) as exc:
        parse_name("a..b")
    assert exc.value.kind == "EmptyLabel"
    assert exc.value.position == 2


@pytest.mark.parametrize("text", ["Alice Smith", "café", "a_b", "-ab", "ab-"])
def test_bad_characters(text):
    with pytest.raises(NameSyntaxError) as exc:
        check_label(text)
    assert exc.value.kind == "BadCharacter"


def test_label_length_limits():
    check_label("a" * 63)
    with pytest.raises(NameSyntaxError) as exc:
        check_label("a" * 64)
    assert exc.value.kind == "TooLong"


def test_name_length_limit():
    ok = ".".join(["a" * 63] * 4)  # 255 characters
    assert len(ok) == 255
    parse_name(ok)
    with pytest.raises(NameSyntaxError) as exc:
        parse_name(ok + "b")
    assert exc.value.kind == "TooLong"
    assert exc.value.position == 0


def test_normalization_is_ascii_lowercase():
    assert normalize_label("PhOnE-2") == "phone-2"
    assert parse_name("PC.Alice").normalized() == ("pc", "alice")


def test_digits_and_inner_hyphens_allowed():
    assert is_valid_label("home-pc-2")
    assert is_valid_label("42")
    assert not is_valid_label("")
