"""Query-model documents: which device nodes to poll, how often, kept how long.

The document is JSON::

    {"version": 1,
     "deviceQueries": [
       {"device": {"name", "location", "connectionURI", "addressSpaceRef"},
        "connectionType": "clientServer" | "pubSub",
        "queries": [{"nodeRef": {"ns", "id", "kind"}, "intervalMillis",
                     "depth", "retentionMillis", "destination"?}]}]}

Unknown keys are rejected at every level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Mapping
from urllib.parse import urlparse

from infoengine.errors import (
    InvalidValue,
    MalformedDocument,
    MissingField,
    UnresolvableNode,
)
from infoengine.nodes import AddressSpace, NodeRef

MAX_DEPTH = 32


class ConnectionType(str, Enum):
    CLIENT_SERVER = "clientServer"
    PUB_SUB = "pubSub"


@dataclass(frozen=True)
class DeviceDescriptor:
    name: str
    location: str
    connection_uri: str
    address_space_ref: str

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "location": self.location,
            "connectionURI": self.connection_uri,
            "addressSpaceRef": self.address_space_ref,
        }


@dataclass(frozen=True)
class QuerySpec:
    node_ref: NodeRef
    interval_millis: int
    depth: int
    retention_millis: int
    destination: str | None = None

    def to_json(self) -> dict:
        out = {
            "nodeRef": self.node_ref.to_json(),
            "intervalMillis": self.interval_millis,
            "depth": self.depth,
            "retentionMillis": self.retention_millis,
        }
        if self.destination is not None:
            out["destination"] = self.destination
        return out


@dataclass(frozen=True)
class DeviceQuery:
    device: DeviceDescriptor
    connection_type: ConnectionType
    queries: tuple[QuerySpec, ...]

    def to_json(self) -> dict:
        return {
            "device": self.device.to_json(),
            "connectionType": self.connection_type.value,
            "queries": [q.to_json() for q in self.queries],
        }


@dataclass(frozen=True)
class QueryModelDoc:
    version: int
    device_queries: tuple[DeviceQuery, ...]

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "deviceQueries": [dq.to_json() for dq in self.device_queries],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def effective_destination(q: QuerySpec) -> str:
    """Topic a query writes to: its destination, or the canonical node reference."""
    if q.destination is not None:
        return q.destination
    return q.node_ref.canonical


# -- parsing ---------------------------------------------------------------


def _obj(value: Any, path: str, keys: set[str], required: set[str]) -> dict:
    if not isinstance(value, dict):
        raise InvalidValue(path, "must be an object")
    unknown = set(value) - keys
    if unknown:
        raise InvalidValue(path, f"unknown keys {sorted(unknown)}")
    for key in sorted(required):
        if key not in value:
            raise MissingField(f"{path}.{key}" if path else key)
    return value


def _int(value: Any, path: str, minimum: int) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise InvalidValue(path, "must be an integer")
    if value < minimum:
        raise InvalidValue(path, f"must be ≥ {minimum}")
    return value


def _str(value: Any, path: str, nonempty: bool = True) -> str:
    if not isinstance(value, str):
        raise InvalidValue(path, "must be a string")
    if nonempty and not value:
        raise InvalidValue(path, "must be non-empty")
    return value


def _parse_device(raw: Any, path: str) -> DeviceDescriptor:
    obj = _obj(raw, path, {"name", "location", "connectionURI", "addressSpaceRef"},
               {"name", "location", "connectionURI", "addressSpaceRef"})
    uri = _str(obj["connectionURI"], f"{path}.connectionURI")
    if not urlparse(uri).scheme:
        raise InvalidValue(f"{path}.connectionURI", "not a URI")
    return DeviceDescriptor(
        name=_str(obj["name"], f"{path}.name"),
        location=_str(obj["location"], f"{path}.location", nonempty=False),
        connection_uri=uri,
        address_space_ref=_str(obj["addressSpaceRef"], f"{path}.addressSpaceRef"),
    )


def _parse_query(raw: Any, path: str) -> QuerySpec:
    obj = _obj(
        raw, path,
        {"nodeRef", "intervalMillis", "depth", "retentionMillis", "destination"},
        {"nodeRef", "intervalMillis", "depth", "retentionMillis"},
    )
    interval = _int(obj["intervalMillis"], "intervalMillis", 1)
    retention = _int(obj["retentionMillis"], "retentionMillis", 1)
    if retention < interval:
        raise InvalidValue("retentionMillis", "must be ≥ intervalMillis")
    depth = _int(obj["depth"], "depth", 0)
    if depth > MAX_DEPTH:
        raise InvalidValue("depth", f"must be ≤ {MAX_DEPTH}")
    destination = obj.get("destination")
    if destination is not None:
        destination = _str(destination, f"{path}.destination")
    return QuerySpec(
        node_ref=NodeRef.from_json(obj["nodeRef"], f"{path}.nodeRef"),
        interval_millis=interval,
        depth=depth,
        retention_millis=retention,
        destination=destination,
    )


def parse_device_query(raw: Any, path: str = "deviceQuery") -> DeviceQuery:
    obj = _obj(raw, path, {"device", "connectionType", "queries"},
               {"device", "connectionType", "queries"})
    try:
        ctype = ConnectionType(obj["connectionType"])
    except ValueError:
        raise InvalidValue(f"{path}.connectionType", "must be clientServer or pubSub") from None
    if not isinstance(obj["queries"], list) or not obj["queries"]:
        raise InvalidValue(f"{path}.queries", "must be a non-empty list")
    queries = tuple(
        _parse_query(q, f"{path}.queries[{i}]") for i, q in enumerate(obj["queries"])
    )
    seen = set()
    for q in queries:
        key = (q.node_ref.canonical, effective_destination(q))
        if key in seen:
            raise InvalidValue(f"{path}.queries", f"duplicate query for {key[0]} -> {key[1]}")
        seen.add(key)
    return DeviceQuery(_parse_device(obj["device"], f"{path}.device"), ctype, queries)


def parse_query_model(text: str | bytes) -> QueryModelDoc:
    try:
        raw = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedDocument(f"not a JSON document: {exc}") from None
    obj = _obj(raw, "", {"version", "deviceQueries"}, {"version", "deviceQueries"})
    version = _int(obj["version"], "version", 1)
    if not isinstance(obj["deviceQueries"], list):
        raise InvalidValue("deviceQueries", "must be a list")
    dqs = tuple(
        parse_device_query(dq, f"deviceQueries[{i}]")
        for i, dq in enumerate(obj["deviceQueries"])
    )
    names = [dq.device.name for dq in dqs]
    if len(names) != len(set(names)):
        raise InvalidValue("deviceQueries", "duplicate device name")
    return QueryModelDoc(version, dqs)


# -- analysis --------------------------------------------------------------


def expand_depth(q: QuerySpec, address_space: AddressSpace) -> list[NodeRef]:
    """Variable nodes covered by ``q``: the root (if a Variable) plus
    Variable descendants up to ``q.depth`` levels down, in browse order."""
    root = address_space.resolve(q.node_ref)
    out: list[NodeRef] = []
    if root.is_variable:
        out.append(q.node_ref)

    def visit(node, remaining):
        if remaining == 0:
            return
        for child in node.sorted_children():
            if child.is_variable:
                out.append(child.node_ref)
            visit(child, remaining - 1)

    visit(root, q.depth)
    seen: set[str] = set()
    unique = []
    for ref in out:
        if ref.canonical not in seen:
            seen.add(ref.canonical)
            unique.append(ref)
    return unique


@dataclass(frozen=True)
class StateSpaceEstimate:
    per_device: dict[str, int]
    total: int


def estimate_state_space(
    doc: QueryModelDoc, address_spaces: Mapping[str, AddressSpace]
) -> StateSpaceEstimate:
    per_device: dict[str, int] = {}
    for dq in doc.device_queries:
        name = dq.device.name
        if name not in address_spaces:
            raise UnresolvableNode(dq.device.address_space_ref, device=name)
        space = address_spaces[name]
        nodes: set[str] = set()
        for q in dq.queries:
            try:
                refs = expand_depth(q, space)
            except UnresolvableNode as exc:
                raise UnresolvableNode(exc.ref, device=name) from None
            # browse-path and node-id spellings of one node count once
            nodes.update(space.resolve(r).node_ref.canonical for r in refs)
        per_device[name] = len(nodes)
    return StateSpaceEstimate(per_device, sum(per_device.values()))


HORIZON_SECONDS = {"day": 86_400, "month": 30 * 86_400, "year": 365 * 86_400}
_UNITS = [("GB", 1024**3), ("MB", 1024**2), ("KB", 1024)]


def human_bytes(n: int) -> str:
    for label, size in _UNITS:
        if n >= size:
            return f"{n / size:.2f} {label}"
    return f"{n} B"


@dataclass(frozen=True)
class VolumeEstimate:
    bytes: int
    human: str


def estimate_volume(sample_bytes: int, rate_hz: float, horizon: str) -> VolumeEstimate:
    if sample_bytes < 1:
        raise InvalidValue("sampleBytes", "must be ≥ 1")
    if rate_hz <= 0:
        raise InvalidValue("rateHz", "must be > 0")
    if horizon not in HORIZON_SECONDS:
        raise InvalidValue("horizon", "must be day, month or year")
    exact = sample_bytes * Fraction(rate_hz) * HORIZON_SECONDS[horizon]
    total = round(exact)
    return VolumeEstimate(total, human_bytes(total))
