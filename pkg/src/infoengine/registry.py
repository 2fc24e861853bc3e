"""Simple asset management: device registrations, metadata store, fetch schedule.

All mutations go through one lock; readers get immutable snapshots. With a
``path`` the registry persists itself as one JSON document, replaced
atomically after every mutation.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from infoengine.errors import (
    DuplicateDevice,
    UnknownDevice,
    UnknownMetadataKey,
    UnresolvableNode,
)
from infoengine.nodes import AddressSpace, DataType, NodeRef
from infoengine.query_model import (
    ConnectionType,
    DeviceDescriptor,
    DeviceQuery,
    QuerySpec,
    effective_destination,
    expand_depth,
)

log = logging.getLogger(__name__)

SNAPSHOT_VERSION = 1


class DeviceStatus(str, Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"


@dataclass(frozen=True)
class MetadataEntry:
    metadata_key: str
    display_name: str
    engineering_unit: str
    data_type: DataType
    address_space_path: str
    tags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "metadataKey": self.metadata_key,
            "displayName": self.display_name,
            "engineeringUnit": self.engineering_unit,
            "dataType": self.data_type.value,
            "addressSpacePath": self.address_space_path,
            "tags": list(self.tags),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "MetadataEntry":
        return cls(
            obj["metadataKey"], obj["displayName"], obj["engineeringUnit"],
            DataType(obj["dataType"]), obj["addressSpacePath"], tuple(obj.get("tags", ())),
        )


@dataclass(frozen=True)
class ScheduleEntry:
    device_id: str
    device_name: str
    connection_uri: str
    node_ref: NodeRef
    interval_millis: int
    retention_millis: int
    topic: str
    activated_at: int = 0

    @property
    def metadata_key(self) -> str:
        return metadata_key(self.device_id, self.node_ref)

    def to_json(self) -> dict:
        return {
            "deviceId": self.device_id,
            "deviceName": self.device_name,
            "connectionURI": self.connection_uri,
            "nodeRef": self.node_ref.to_json(),
            "intervalMillis": self.interval_millis,
            "retentionMillis": self.retention_millis,
            "topic": self.topic,
            "activatedAt": self.activated_at,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScheduleEntry":
        return cls(
            obj["deviceId"], obj["deviceName"], obj["connectionURI"],
            NodeRef.from_json(obj["nodeRef"]), obj["intervalMillis"],
            obj["retentionMillis"], obj["topic"], obj.get("activatedAt", 0),
        )


@dataclass(frozen=True)
class DeviceRecord:
    device_id: str
    descriptor: DeviceDescriptor
    connection_type: ConnectionType
    query_model: tuple[QuerySpec, ...]
    registered_at: int
    status: DeviceStatus = DeviceStatus.ACTIVE
    schedule: tuple[ScheduleEntry, ...] = field(default=(), repr=False)

    def to_json(self) -> dict:
        return {
            "deviceId": self.device_id,
            "descriptor": self.descriptor.to_json(),
            "connectionType": self.connection_type.value,
            "queryModel": [q.to_json() for q in self.query_model],
            "registeredAt": self.registered_at,
            "status": self.status.value,
            "schedule": [e.to_json() for e in self.schedule],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DeviceRecord":
        d = obj["descriptor"]
        queries = tuple(
            QuerySpec(NodeRef.from_json(q["nodeRef"]), q["intervalMillis"], q["depth"],
                      q["retentionMillis"], q.get("destination"))
            for q in obj["queryModel"]
        )
        return cls(
            obj["deviceId"],
            DeviceDescriptor(d["name"], d["location"], d["connectionURI"], d["addressSpaceRef"]),
            ConnectionType(obj["connectionType"]),
            queries,
            obj["registeredAt"],
            DeviceStatus(obj["status"]),
            tuple(ScheduleEntry.from_json(e) for e in obj["schedule"]),
        )


def metadata_key(device_id: str, ref: NodeRef) -> str:
    return f"{device_id}:{ref.canonical}"


def node_topic(q: QuerySpec, ref: NodeRef) -> str:
    """Topic for one expanded node. Depth-0 queries write to the destination
    itself; deeper queries write each node under ``<destination>/<nodeRef>``."""
    base = effective_destination(q)
    if q.depth == 0:
        return base
    return f"{base}/{ref.canonical}"


def device_order(device_id: str) -> tuple[int, str]:
    prefix, _, num = device_id.rpartition("-")
    return (int(num), device_id) if num.isdigit() else (0, device_id)


class Registry:
    def __init__(self, path: str | Path | None = None, clock=None):
        self.path = Path(path) if path is not None else None
        self.clock = clock
        self._lock = threading.RLock()
        self._counter = 0
        self._devices: dict[str, DeviceRecord] = {}
        self._metadata: dict[str, MetadataEntry] = {}
        if self.path is not None and self.path.exists():
            self._load()

    # -- persistence --------------------------------------------------------

    def _load(self) -> None:
        doc = json.loads(self.path.read_text())
        self._counter = doc["counter"]
        self._devices = {d["deviceId"]: DeviceRecord.from_json(d) for d in doc["devices"]}
        self._metadata = {m["metadataKey"]: MetadataEntry.from_json(m) for m in doc["metadata"]}

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "snapshotVersion": SNAPSHOT_VERSION,
                "counter": self._counter,
                "devices": [self._devices[k].to_json()
                            for k in sorted(self._devices, key=device_order)],
                "metadata": [self._metadata[k].to_json() for k in sorted(self._metadata)],
            }

    def _persist(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with open(tmp, "w") as fh:
            json.dump(self.snapshot(), fh, indent=2)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.path)

    # -- registration -------------------------------------------------------

    def register_device(self, dq: DeviceQuery, address_space: AddressSpace) -> DeviceRecord:
        name = dq.device.name
        with self._lock:
            if any(r.descriptor.name == name for r in self._devices.values()):
                raise DuplicateDevice(f"device {name!r} already registered")
            device_id = f"dev-{self._counter + 1}"
            now = self.clock.now() if self.clock is not None else 0

            schedule: list[ScheduleEntry] = []
            metadata: dict[str, MetadataEntry] = {}
            seen: set[tuple[str, str]] = set()
            for q in dq.queries:
                try:
                    refs = expand_depth(q, address_space)
                except UnresolvableNode as exc:
                    raise UnresolvableNode(exc.ref, device=name) from None
                for ref in refs:
                    topic = node_topic(q, ref)
                    if (ref.canonical, topic) in seen:
                        continue
                    seen.add((ref.canonical, topic))
                    schedule.append(ScheduleEntry(
                        device_id, name, dq.device.connection_uri, ref,
                        q.interval_millis, q.retention_millis, topic, now,
                    ))
                    node = address_space.resolve(ref)
                    key = metadata_key(device_id, ref)
                    metadata[key] = MetadataEntry(
                        key,
                        node.display_name or node.browse_name,
                        node.engineering_unit,
                        node.data_type,
                        address_space.path_of(ref),
                        node.tags,
                    )

            record = DeviceRecord(
                device_id, dq.device, dq.connection_type, dq.queries, now,
                DeviceStatus.ACTIVE,
                tuple(sorted(schedule, key=lambda e: (e.node_ref.canonical, e.topic))),
            )
            self._counter += 1
            self._devices[device_id] = record
            self._metadata.update(metadata)
            self._persist()
        log.info("registered %s as %s with %d schedule entries", name, device_id, len(schedule))
        return record

    def list_devices(self) -> list[DeviceRecord]:
        with self._lock:
            return [self._devices[k] for k in sorted(self._devices, key=device_order)]

    def get_device(self, device_id: str) -> DeviceRecord:
        with self._lock:
            try:
                return self._devices[device_id]
            except KeyError:
                raise UnknownDevice(device_id) from None

    def find_device(self, name: str) -> DeviceRecord:
        with self._lock:
            for record in self._devices.values():
                if record.descriptor.name == name:
                    return record
        raise UnknownDevice(name)

    def _set_status(self, device_id: str, status: DeviceStatus) -> None:
        with self._lock:
            record = self.get_device(device_id)
            self._devices[device_id] = replace(record, status=status)
            self._persist()

    def suspend_device(self, device_id: str) -> None:
        self._set_status(device_id, DeviceStatus.SUSPENDED)

    def resume_device(self, device_id: str) -> None:
        self._set_status(device_id, DeviceStatus.ACTIVE)

    def is_active(self, device_id: str) -> bool:
        record = self._devices.get(device_id)
        return record is not None and record.status is DeviceStatus.ACTIVE

    def active_schedule(self) -> list[ScheduleEntry]:
        with self._lock:
            entries = [
                e for r in self._devices.values() if r.status is DeviceStatus.ACTIVE
                for e in r.schedule
            ]
        return sorted(entries, key=lambda e: (device_order(e.device_id), e.node_ref.canonical, e.topic))

    def topic_retention(self) -> dict[str, int]:
        """Retention per topic over all devices; conflicting retentions take the maximum."""
        out: dict[str, int] = {}
        with self._lock:
            for record in self._devices.values():
                for e in record.schedule:
                    out[e.topic] = max(out.get(e.topic, 0), e.retention_millis)
        return out

    # -- metadata -----------------------------------------------------------

    def get_metadata(self, key: str) -> MetadataEntry:
        with self._lock:
            try:
                return self._metadata[key]
            except KeyError:
                raise UnknownMetadataKey(key) from None

    def update_metadata(self, key: str, entry: MetadataEntry) -> None:
        with self._lock:
            if key not in self._metadata:
                raise UnknownMetadataKey(key)
            self._metadata[key] = replace(entry, metadata_key=key)
            self._persist()

    def put_metadata(self, entry: MetadataEntry) -> None:
        """Insert or replace; used for metadata derived by transformations."""
        with self._lock:
            self._metadata[entry.metadata_key] = entry
            self._persist()

    def delete_metadata(self, key: str) -> None:
        with self._lock:
            if self._metadata.pop(key, None) is None:
                raise UnknownMetadataKey(key)
            self._persist()

    def metadata_keys(self) -> list[str]:
        with self._lock:
            return sorted(self._metadata)
