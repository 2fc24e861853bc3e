"""One engine instance: registry, buffer, serving store and sources under a data dir.

Layout under ``data_dir``::

    registry.json    registry snapshot
    buffer/          topic segment files
    serving.json     serving tables
    state.json       virtual clock, last scheduler horizon, pipeline specs

Without a data dir everything lives in memory.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any
from urllib.parse import urlparse

from infoengine import egress
from infoengine.bench import BenchConfig, BenchReport, run_bench
from infoengine.buffer import Buffer
from infoengine.clock import VirtualClock
from infoengine.codec import Envelope
from infoengine.errors import (
    DuplicateDevice,
    InvalidValue,
    SourceUnavailable,
    UnresolvableNode,
)
from infoengine.ingress import IngestConfig, IngestReport, MetadataMode, run_scheduler
from infoengine.nodes import AddressSpace
from infoengine.query_model import (
    HORIZON_SECONDS,
    DeviceDescriptor,
    QueryModelDoc,
    estimate_state_space,
    estimate_volume,
    expand_depth,
    human_bytes,
    parse_query_model,
)
from infoengine.registry import DeviceRecord, Registry
from infoengine.serving import ServingStore, StateVector, TrajectoryQuery, assemble_trajectory
from infoengine.source import SimDevice, SourceAdapter, SourcePool
from infoengine.transform import PipelineSpec, TransformReport, parse_pipeline, read_envelopes, run_pipeline
from infoengine.transport import TcpSourceClient

log = logging.getLogger(__name__)

DATA_DIR_ENV = "IE_DATA_DIR"


def resolve_ref(ref: str, base_dir: str | Path | None) -> str:
    """Make a relative address-space file reference absolute against ``base_dir``."""
    parsed = urlparse(ref)
    if parsed.scheme == "file":
        return parsed.path
    if parsed.scheme and len(parsed.scheme) > 1:
        return ref
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return str(path.resolve()) if base_dir is not None else str(path)


def adapter_for(descriptor: DeviceDescriptor) -> SourceAdapter:
    scheme = urlparse(descriptor.connection_uri).scheme
    if scheme == "sim":
        try:
            device = SimDevice.from_file(descriptor.address_space_ref)
        except OSError as exc:
            raise SourceUnavailable(f"{descriptor.name}: {exc}") from exc
        device.name = descriptor.name
        return device
    if scheme in ("tcp", "simtcp"):
        return TcpSourceClient.from_uri(descriptor.name, descriptor.connection_uri)
    raise SourceUnavailable(
        f"{descriptor.name}: no adapter for {descriptor.connection_uri!r} (supported: sim://, tcp://)")


@dataclass
class _State:
    now: int = 0
    last_until: int | None = None
    pipelines: dict[str, dict] = field(default_factory=dict)


class Engine:
    def __init__(self, data_dir: str | Path | None = None, clock=None):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        self._state = self._load_state()
        self.clock = clock if clock is not None else VirtualClock(self._state.now)
        self.registry = Registry(self._path("registry.json"), clock=self.clock)
        self.buffer = Buffer(self._path("buffer"))
        self.serving = ServingStore(self._path("serving.json"))
        self.sources = SourcePool()
        self.subscriptions: dict[str, egress.Subscription] = {}
        self._sub_counter = 0
        self._lock = threading.RLock()

    @classmethod
    def from_env(cls) -> "Engine":
        return cls(os.environ.get(DATA_DIR_ENV) or None)

    def _path(self, name: str) -> Path | None:
        return self.data_dir / name if self.data_dir is not None else None

    def _load_state(self) -> _State:
        path = self._path("state.json")
        if path is None or not path.exists():
            return _State()
        doc = json.loads(path.read_text())
        return _State(doc["now"], doc["lastUntil"], doc.get("pipelines", {}))

    def _save_state(self) -> None:
        if isinstance(self.clock, VirtualClock):
            self._state.now = self.clock.now()
        path = self._path("state.json")
        if path is None:
            return
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({
            "now": self._state.now,
            "lastUntil": self._state.last_until,
            "pipelines": self._state.pipelines,
        }, indent=2))
        os.replace(tmp, path)

    # -- sources ------------------------------------------------------------

    def add_source(self, adapter: SourceAdapter) -> None:
        """Attach an adapter by device name; overrides URI-based resolution."""
        self.sources.add(adapter)

    def source(self, descriptor: DeviceDescriptor) -> SourceAdapter:
        if descriptor.name not in self.sources:
            self.sources.add(adapter_for(descriptor))
        return self.sources.get(descriptor.name)

    def _address_space(self, descriptor: DeviceDescriptor) -> AddressSpace:
        return self.source(descriptor).address_space()

    # -- registration -------------------------------------------------------

    def _resolved(self, doc: QueryModelDoc, base_dir) -> QueryModelDoc:
        dqs = tuple(
            replace(dq, device=replace(
                dq.device, address_space_ref=resolve_ref(dq.device.address_space_ref, base_dir)))
            for dq in doc.device_queries
        )
        return replace(doc, device_queries=dqs)

    def register(self, text: str, base_dir: str | Path | None = None) -> list[DeviceRecord]:
        doc = self._resolved(parse_query_model(text), base_dir)
        with self._lock:
            existing = {r.descriptor.name for r in self.registry.list_devices()}
            for dq in doc.device_queries:
                if dq.device.name in existing:
                    raise DuplicateDevice(f"device {dq.device.name!r} already registered")
            spaces = {dq.device.name: self._address_space(dq.device) for dq in doc.device_queries}
            # validate every query before registering anything
            estimate_state_space(doc, spaces)
            return [self.registry.register_device(dq, spaces[dq.device.name])
                    for dq in doc.device_queries]

    # -- ingest -------------------------------------------------------------

    def run(self, until: int, metadata: str = "inline") -> IngestReport:
        with self._lock:
            since = self._state.last_until
            if since is not None and until <= since:
                raise InvalidValue("until", f"must be after the previous horizon {since}")
            for record in self.registry.list_devices():
                try:
                    self.source(record.descriptor)
                except SourceUnavailable as exc:
                    # the scheduler reports the missing adapter per tick
                    log.warning("%s", exc)
            cfg = IngestConfig(metadata_mode=MetadataMode(metadata), clock=self.clock)
            report = run_scheduler(self.registry, self.buffer, self.sources, cfg, until, since)
            if isinstance(self.clock, VirtualClock):
                self.clock.sleep_until(until)
            self._state.last_until = until
            self._save_state()
            return report

    # -- buffer access ------------------------------------------------------

    def topics(self) -> list[dict]:
        out = []
        for name in self.buffer.topics():
            log_ = self.buffer.topic(name)
            out.append({"name": name, "earliestOffset": log_.earliest_offset,
                        "nextOffset": log_.next_offset, "retentionMillis": log_.retention_millis})
        return out

    def tail(self, topic: str, from_offset: int | None = None, max_count: int = 100) -> list[Envelope]:
        log_ = self.buffer.topic(topic)
        if from_offset is None:
            from_offset = max(log_.earliest_offset, log_.next_offset - max_count)
        return read_envelopes(self.buffer, topic, from_offset, from_offset + max_count)

    def query(self, topic: str, t0: int, t1: int) -> list[Envelope]:
        """Envelopes of ``topic`` whose source time lies in ``[t0, t1)``."""
        return [e for e in read_envelopes(self.buffer, topic) if t0 <= e.source_ts < t1]

    def query_table(self, table: str, t0: int, t1: int):
        return self.serving.range_query(table, t0, t1)

    def trajectory(self, q: TrajectoryQuery, from_tables: bool = False) -> list[StateVector]:
        return assemble_trajectory(q, self.buffer, self.registry, self.serving, from_tables)

    # -- estimates ----------------------------------------------------------

    def estimate(self, text: str, base_dir=None, sample_bytes: int = 1024) -> dict:
        doc = self._resolved(parse_query_model(text), base_dir)
        spaces: dict[str, AddressSpace] = {}
        for dq in doc.device_queries:
            try:
                spaces[dq.device.name] = self._address_space(dq.device)
            except (SourceUnavailable, OSError, ValueError) as exc:
                log.info("no address space for %s (%s); counting one node per query",
                         dq.device.name, exc)
        totals = dict.fromkeys(HORIZON_SECONDS, 0)
        for dq in doc.device_queries:
            space = spaces.get(dq.device.name)
            for q in dq.queries:
                nodes = len(expand_depth(q, space)) if space is not None else 1
                rate = Fraction(1000, q.interval_millis)
                for horizon in totals:
                    totals[horizon] += nodes * estimate_volume(sample_bytes, rate, horizon).bytes
        volume = {h: {"bytes": b, "human": human_bytes(b)} for h, b in totals.items()}
        line = ", ".join(f"{volume[h]['human']}/{h}" for h in ("day", "month", "year"))
        state_space = None
        if len(spaces) == len(doc.device_queries):
            try:
                est = estimate_state_space(doc, spaces)
                state_space = {"perDevice": est.per_device, "total": est.total}
            except UnresolvableNode as exc:
                state_space = {"error": str(exc)}
        return {"sampleBytes": sample_bytes, "volume": volume, "summary": line,
                "stateSpace": state_space}

    # -- pipelines ----------------------------------------------------------

    def run_pipeline(self, spec: PipelineSpec | dict | str, from_ts: int | None = None,
                     to_ts: int | None = None) -> TransformReport:
        if not isinstance(spec, PipelineSpec):
            spec = parse_pipeline(spec)
        with self._lock:
            known = self._state.pipelines.get(spec.name)
            if known is not None and known != spec.to_json():
                raise InvalidValue("name", f"pipeline {spec.name!r} exists with a different definition")
            from_offsets, to_offsets = {}, {}
            for topic in spec.input_topics:
                log_ = self.buffer.topic(topic)
                if from_ts is not None:
                    from_offsets[topic] = log_.read_time(from_ts)
                if to_ts is not None:
                    to_offsets[topic] = log_.read_time(to_ts)
            report = run_pipeline(spec, self.buffer, self.serving, from_offsets, to_offsets,
                                  registry=self.registry)
            self._state.pipelines[spec.name] = spec.to_json()
            self._save_state()
            self.serving.flush()
            return report

    # -- egress -------------------------------------------------------------

    def subscribe(self, topic: str, mode: str = "fromOffset", value: int = 0) -> tuple[str, egress.Subscription]:
        sub = egress.subscribe(self.buffer, topic, mode, value)
        with self._lock:
            self._sub_counter += 1
            sub_id = f"sub-{self._sub_counter}"
            self.subscriptions[sub_id] = sub
        return sub_id, sub

    def bench(self, cfg: BenchConfig) -> BenchReport:
        return run_bench(cfg)

    def close(self) -> None:
        self.buffer.sync()
        self.buffer.close()
        self.serving.flush()
        self._save_state()

    def describe(self) -> dict[str, Any]:
        return {
            "dataDir": str(self.data_dir) if self.data_dir else None,
            "bufferMode": self.buffer.mode,
            "now": self.clock.now(),
            "lastRunUntil": self._state.last_until,
            "devices": len(self.registry.list_devices()),
            "topics": len(self.buffer.topics()),
        }
