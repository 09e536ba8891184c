"""User-relative names for personal devices.

Devices keep signed, hash-chained logs of naming records, replicate them by
gossip, and compute their namespace locally.  A deterministic network
simulator and a scenario replayer drive the protocol end to end.
"""

from .actions import (
    Device,
    create_group,
    init_device,
    link_users,
    merge_devices,
    name_device,
    remove_binding,
    rename_binding,
    revoke_device,
)
from .identity import EID, DeviceIdentity, generate_identity
from .names import parse_name
from .replication import RecordStore, gossip_round, ingest
from .resolver import resolve
from .view import NamespaceView, build_view, cluster_of, list_conflicts

__all__ = [
    "Device",
    "DeviceIdentity",
    "EID",
    "NamespaceView",
    "RecordStore",
    "build_view",
    "cluster_of",
    "create_group",
    "generate_identity",
    "gossip_round",
    "ingest",
    "init_device",
    "link_users",
    "list_conflicts",
    "merge_devices",
    "name_device",
    "parse_name",
    "remove_binding",
    "rename_binding",
    "resolve",
    "revoke_device",
]
