"""Builders shared by the test modules."""

from __future__ import annotations

import json

from infoengine.buffer import Buffer
from infoengine.clock import VirtualClock
from infoengine.ingress import IngestConfig, run_scheduler
from infoengine.nodes import AddressSpace, AddressSpaceNode, DataType, NodeClass, NodeRef
from infoengine.query_model import ConnectionType, DeviceDescriptor, DeviceQuery, QuerySpec
from infoengine.registry import Registry
from infoengine.source import SimDevice, SourcePool


def var(ident: str, name: str | None = None, dtype: DataType = DataType.FLOAT64,
        unit: str = "", ns: int = 2) -> AddressSpaceNode:
    return AddressSpaceNode(NodeRef(ns, ident), name or ident.split(".")[-1], NodeClass.VARIABLE,
                            dtype, engineering_unit=unit)


def obj(ident: str, children=(), name: str | None = None, ns: int = 2) -> AddressSpaceNode:
    return AddressSpaceNode(NodeRef(ns, ident), name or ident.split(".")[-1], NodeClass.OBJECT,
                            children=tuple(children))


def flat_space(prefix: str, n_vars: int, dtype: DataType = DataType.FLOAT64) -> AddressSpace:
    """``Objects/<prefix>`` holding ``n_vars`` variables named V0..V(n-1)."""
    folder = obj(prefix, [var(f"{prefix}.V{i}", dtype=dtype, unit="u") for i in range(n_vars)])
    return AddressSpace(obj("Objects", [folder], ns=0))


def press_space() -> AddressSpace:
    press = obj("Press", [
        var("Press.Force", unit="kN"),
        var("Press.Stroke", unit="mm"),
        var("Press.Count", dtype=DataType.INT64),
        obj("Press.Motor", [var("Press.Motor.Speed", unit="rpm"),
                            var("Press.Motor.Label", dtype=DataType.STRING)]),
    ])
    return AddressSpace(obj("Objects", [press], ns=0))


def sim_device(name: str, space: AddressSpace, signals: dict | None = None, seed: int = 0) -> SimDevice:
    return SimDevice(name, space, seed=seed, signals=signals or {})


def device_query(name: str, queries, connection=ConnectionType.CLIENT_SERVER) -> DeviceQuery:
    return DeviceQuery(DeviceDescriptor(name, "hall-1", f"sim://{name}", "inline"), connection,
                       tuple(queries))


def query(ident: str, interval: int = 100, depth: int = 0, retention: int = 60_000,
          destination: str | None = None, ns: int = 2) -> QuerySpec:
    return QuerySpec(NodeRef(ns, ident), interval, depth, retention, destination)


def qm_text(device_queries: list[dict]) -> str:
    return json.dumps({"version": 1, "deviceQueries": device_queries})


def qm_device(name: str, queries: list[dict], connection: str = "clientServer") -> dict:
    return {
        "device": {"name": name, "location": "hall-1", "connectionURI": f"sim://{name}",
                   "addressSpaceRef": f"{name}.json"},
        "connectionType": connection,
        "queries": queries,
    }


def qm_query(ident: str, interval: int = 1000, depth: int = 0, retention: int = 60_000,
             ns: int = 2, **extra) -> dict:
    out = {"nodeRef": {"ns": ns, "id": ident, "kind": "nodeId"}, "intervalMillis": interval,
           "depth": depth, "retentionMillis": retention}
    out.update(extra)
    return out


def ingest(devices, until: int, mode: str = "inline", buffer: Buffer | None = None):
    """Register ``(device, queries)`` pairs, run the scheduler to ``until``.

    Returns ``(registry, buffer, pool, report)``.
    """
    clock = VirtualClock(0)
    registry = Registry(clock=clock)
    for dev, queries in devices:
        registry.register_device(device_query(dev.name, queries), dev.address_space())
    buffer = buffer if buffer is not None else Buffer()
    pool = SourcePool([dev for dev, _ in devices])
    report = run_scheduler(registry, buffer, pool, IngestConfig(mode, clock=clock), until)
    return registry, buffer, pool, report
