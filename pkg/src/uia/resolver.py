"""Right-to-left resolution of dotted names against a namespace view."""

from __future__ import annotations

from dataclasses import dataclass

from .identity import EID
from .names import DottedName, NameSyntaxError, parse_name
from .view import NamespaceClass, NamespaceView, target_key

__all__ = [
    "Ambiguous",
    "DeviceResult",
    "NameSyntaxError",
    "NamespaceResult",
    "NotFound",
    "ResolutionError",
    "TypeMismatch",
    "parse_name",
    "resolve",
    "resolve_text",
]


class ResolutionError(LookupError):
    kind = "ResolutionError"

    def __init__(self, label: str, detail: str = ""):
        self.label = label
        super().__init__(f"{self.kind}: {label!r}{' ' + detail if detail else ''}")


class NotFound(ResolutionError):
    kind = "NotFound"


class Ambiguous(ResolutionError):
    kind = "Ambiguous"

    def __init__(self, label: str, targets: frozenset):
        self.targets = targets
        super().__init__(label, f"({len(targets)} targets)")


class TypeMismatch(ResolutionError):
    kind = "TypeMismatch"


@dataclass(frozen=True)
class DeviceResult:
    eid: EID


@dataclass(frozen=True)
class NamespaceResult:
    cls: NamespaceClass


def resolve(view: NamespaceView, root: NamespaceClass, name: DottedName):
    current = root
    labels = name.labels
    for i in range(len(labels) - 1, -1, -1):
        label = labels[i]
        group = view.lookup(current, label)
        if not group:
            raise NotFound(label)
        targets = frozenset(b.target for b in group)
        if len(targets) > 1:
            raise Ambiguous(label, targets)
        (target,) = targets
        if isinstance(target, NamespaceClass):
            current = target
        elif i == 0:
            return DeviceResult(target)
        else:
            raise TypeMismatch(label, "names a device, not a namespace")
    return NamespaceResult(current)


def resolve_text(view: NamespaceView, root: NamespaceClass, text: str):
    return resolve(view, root, parse_name(text))


def describe_result(result, names=None) -> str:
    names = names or {}
    if isinstance(result, DeviceResult):
        return "device " + names.get(result.eid, result.eid.hex())
    rep = result.cls.representative
    return f"namespace {names.get(rep.author, rep.author.hex()[:12])}#{rep.seq}"


def sorted_targets(targets) -> list:
    return sorted(targets, key=target_key)
