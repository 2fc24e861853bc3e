"""Connection engine: scheduled reads, envelope wrapping, buffer appends."""

from __future__ import annotations

import heapq
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from infoengine.buffer import Buffer
from infoengine.clock import VirtualClock
from infoengine.codec import Envelope, encoder_for, get_codec
from infoengine.errors import EngineError, SourceUnavailable
from infoengine.registry import Registry, ScheduleEntry, device_order
from infoengine.source import SourceAdapter, SourcePool, Status

log = logging.getLogger(__name__)


class MetadataMode(str, Enum):
    INLINE = "inline"
    REFERENCE = "reference"


@dataclass
class IngestConfig:
    metadata_mode: MetadataMode = MetadataMode.INLINE
    codec: str = "json"
    clock: object = field(default_factory=VirtualClock)

    def __post_init__(self):
        self.metadata_mode = MetadataMode(self.metadata_mode)
        get_codec(self.codec)


def fetch_batch(adapter: SourceAdapter, entries: Sequence[ScheduleEntry], at: int,
                cfg: IngestConfig, registry: Registry) -> list[Envelope]:
    """One read call covering ``entries`` (all on one device), envelopes in entry order."""
    refs = [e.node_ref for e in entries]
    try:
        samples = adapter.read(refs, at)
    except EngineError:
        raise
    except Exception as exc:
        raise SourceUnavailable(f"{adapter.name}: {exc}") from exc
    ingest_ts = cfg.clock.now()
    out = []
    for entry, sample in zip(entries, samples):
        if sample.status is not Status.GOOD:
            log.warning("bad sample from %s %s at %d", entry.device_name, entry.node_ref, at)
            continue
        key = entry.metadata_key
        if cfg.metadata_mode is MetadataMode.INLINE:
            meta, meta_key = registry.get_metadata(key).to_json(), None
        else:
            meta, meta_key = None, key
        out.append(Envelope(
            topic=entry.topic,
            device_id=entry.device_id,
            node_ref=entry.node_ref.canonical,
            value=sample.value,
            data_type=sample.data_type,
            source_ts=sample.source_timestamp,
            ingest_ts=ingest_ts,
            meta=meta,
            meta_key=meta_key,
        ))
    return out


def fetch_once(adapter: SourceAdapter, entry: ScheduleEntry, at: int,
               cfg: IngestConfig, registry: Registry) -> list[Envelope]:
    return fetch_batch(adapter, [entry], at, cfg, registry)


def publish(buffer: Buffer, envelopes: Sequence[Envelope], codec: str = "json") -> list[int]:
    """Append envelopes in order; each payload carries its assigned offset as ``seq``."""
    return [
        buffer.append_with(e.topic, e.ingest_ts, encoder_for(e, codec))
        for e in envelopes
    ]


@dataclass
class IngestError:
    at: int
    device_id: str
    message: str


@dataclass
class IngestReport:
    appended: dict[str, int] = field(default_factory=dict)
    reads: int = 0
    ticks: int = 0
    errors: list[IngestError] = field(default_factory=list)

    @property
    def total_appended(self) -> int:
        return sum(self.appended.values())

    def to_json(self) -> dict:
        return {
            "appended": dict(sorted(self.appended.items())),
            "reads": self.reads,
            "ticks": self.ticks,
            "errors": [{"at": e.at, "deviceId": e.device_id, "message": e.message}
                       for e in self.errors],
        }


def _first_tick(entry: ScheduleEntry, since: int | None) -> int:
    start = entry.activated_at
    if since is None or since < start:
        return start
    k = (since - start) // entry.interval_millis + 1
    return start + k * entry.interval_millis


def run_scheduler(registry: Registry, buffer: Buffer, adapters: SourcePool,
                  cfg: IngestConfig, until: int, since: int | None = None,
                  on_tick: Callable[[int], None] | None = None) -> IngestReport:
    """Read every active schedule entry at ``activatedAt + k * interval``.

    Ticks up to and including ``until`` are served; with ``since`` only ticks
    strictly after it, so consecutive runs neither skip nor repeat a tick.
    Entries of one device due at the same instant share one read call. A
    failed read is skipped and reported; the run continues.
    """
    schedule = registry.active_schedule()
    for entry in schedule:
        buffer.ensure_topic(entry.topic, entry.retention_millis)

    heap = []
    for i, entry in enumerate(schedule):
        t = _first_tick(entry, since)
        if t <= until:
            heap.append((t, i))
    heapq.heapify(heap)

    report = IngestReport()
    while heap:
        t = heap[0][0]
        due: list[ScheduleEntry] = []
        while heap and heap[0][0] == t:
            _, i = heapq.heappop(heap)
            due.append(schedule[i])
            nxt = t + schedule[i].interval_millis
            if nxt <= until:
                heapq.heappush(heap, (nxt, i))

        cfg.clock.sleep_until(t)
        if on_tick is not None:
            on_tick(t)
        report.ticks += 1

        by_device: dict[str, list[ScheduleEntry]] = defaultdict(list)
        for entry in due:
            by_device[entry.device_id].append(entry)
        for device_id in sorted(by_device, key=device_order):
            if not registry.is_active(device_id):
                continue
            entries = sorted(by_device[device_id], key=lambda e: (e.node_ref.canonical, e.topic))
            try:
                adapter = adapters.get(entries[0].device_name)
                report.reads += 1
                for e in fetch_batch(adapter, entries, t, cfg, registry):
                    buffer.append_with(e.topic, e.ingest_ts, encoder_for(e, cfg.codec))
                    report.appended[e.topic] = report.appended.get(e.topic, 0) + 1
            except EngineError as exc:
                log.warning("tick %d on %s failed: %s", t, device_id, exc)
                report.errors.append(IngestError(t, device_id, f"{type(exc).__name__}: {exc}"))
    return report
