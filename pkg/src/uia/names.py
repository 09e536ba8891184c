"""DNS-style labels and dotted names."""

from __future__ import annotations

import string
from dataclasses import dataclass

MAX_LABEL = 63
MAX_NAME = 255
_LABEL_CHARS = frozenset(string.ascii_letters + string.digits + "-")


class NameSyntaxError(ValueError):
    """A label or dotted name violates the DNS formatting rules.

    ``kind`` is one of ``EmptyLabel``, ``BadCharacter`` or ``TooLong``;
    ``position`` is the 1-based index of the offending label (0 when the
    whole name is at fault).
    """

    def __init__(self, kind: str, position: int, detail: str = ""):
        self.kind = kind
        self.position = position
        self.detail = detail
        msg = f"{kind} at label {position}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


def check_label(text: str, position: int = 1) -> str:
    if not text:
        raise NameSyntaxError("EmptyLabel", position)
    if len(text) > MAX_LABEL:
        raise NameSyntaxError("TooLong", position, f"{len(text)} > {MAX_LABEL} characters")
    for i, ch in enumerate(text):
        if ch not in _LABEL_CHARS:
            raise NameSyntaxError("BadCharacter", position, f"{ch!r} at offset {i}")
    if text[0] == "-" or text[-1] == "-":
        raise NameSyntaxError("BadCharacter", position, "leading or trailing hyphen")
    return text


def normalize_label(text: str) -> str:
    return text.lower()


def is_valid_label(text: str) -> bool:
    try:
        check_label(text)
    except NameSyntaxError:
        return False
    return True


@dataclass(frozen=True)
class DottedName:
    """Labels in written order, e.g. ``PC.Alice`` -> ``("PC", "Alice")``."""

    labels: tuple[str, ...]

    def __str__(self) -> str:
        return ".".join(self.labels)

    def normalized(self) -> tuple[str, ...]:
        return tuple(normalize_label(label) for label in self.labels)


def parse_name(text: str) -> DottedName:
    if len(text) > MAX_NAME:
        raise NameSyntaxError("TooLong", 0, f"{len(text)} > {MAX_NAME} characters")
    parts = text.split(".")
    for i, part in enumerate(parts, start=1):
        check_label(part, i)
    return DottedName(tuple(parts))
