"""Communication-load bench: sinks reading sources directly (A) or via the buffer (B).

Every number in the report comes from instrumentation counters (source
``read_count`` and records delivered by the buffer), never from formulas.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from infoengine.buffer import Buffer
from infoengine.clock import VirtualClock
from infoengine.errors import InvalidValue
from infoengine.ingress import IngestConfig, run_scheduler
from infoengine.nodes import AddressSpace, AddressSpaceNode, DataType, NodeClass, NodeRef
from infoengine.query_model import (
    ConnectionType,
    DeviceDescriptor,
    DeviceQuery,
    QuerySpec,
)
from infoengine.registry import Registry
from infoengine.source import Ramp, SimDevice, SourcePool

TICK_MILLIS = 1000


@dataclass(frozen=True)
class BenchConfig:
    n_sources: int
    m_sinks: int
    ticks: int
    scenario: str

    def __post_init__(self):
        for name in ("n_sources", "m_sinks", "ticks"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidValue(name, "must be an integer ≥ 1")
        if self.scenario not in ("A", "B"):
            raise InvalidValue("scenario", "must be A or B")


@dataclass(frozen=True)
class BenchReport:
    scenario: str
    n_sources: int
    m_sinks: int
    ticks: int
    per_source_reads: int
    source_side_messages: int
    buffer_side_messages: int
    total_network_messages: int
    historic_source_reads: int = 0

    def to_json(self) -> dict:
        d = asdict(self)
        return {
            "scenario": d["scenario"],
            "n": d["n_sources"],
            "m": d["m_sinks"],
            "k": d["ticks"],
            "perSourceReads": d["per_source_reads"],
            "sourceSideMessages": d["source_side_messages"],
            "bufferSideMessages": d["buffer_side_messages"],
            "totalNetworkMessages": d["total_network_messages"],
            "historicSourceReads": d["historic_source_reads"],
        }


class _Counter:
    def __init__(self):
        self.value = 0
        self._lock = threading.Lock()

    def add(self, n: int) -> None:
        with self._lock:
            self.value += n


SIGNAL = NodeRef(1, "Signal")


def _make_source(i: int) -> SimDevice:
    root = AddressSpaceNode(
        NodeRef(1, "Root"), "Root", NodeClass.OBJECT,
        children=(AddressSpaceNode(SIGNAL, "Signal", NodeClass.VARIABLE, DataType.FLOAT64),),
    )
    return SimDevice(f"src-{i}", AddressSpace(root), seed=i,
                     signals={SIGNAL.canonical: Ramp(float(i + 1))})


def _per_source(sources: list[SimDevice]) -> int:
    counts = {s.read_count for s in sources}
    if len(counts) != 1:
        raise AssertionError(f"uneven source load: {sorted(counts)}")
    return counts.pop()


def _scenario_a(cfg: BenchConfig) -> BenchReport:
    sources = [_make_source(i) for i in range(cfg.n_sources)]
    received = _Counter()

    def sink(_sink_id: int) -> None:
        for tick in range(cfg.ticks):
            for src in sources:
                received.add(len(src.read([SIGNAL], tick * TICK_MILLIS)))

    with ThreadPoolExecutor(max_workers=min(cfg.m_sinks, 8)) as pool:
        list(pool.map(sink, range(cfg.m_sinks)))

    source_side = sum(s.read_count for s in sources)
    assert received.value == source_side
    return BenchReport("A", cfg.n_sources, cfg.m_sinks, cfg.ticks, _per_source(sources),
                       source_side, 0, source_side)


def _scenario_b(cfg: BenchConfig) -> BenchReport:
    sources = [_make_source(i) for i in range(cfg.n_sources)]
    clock = VirtualClock(0)
    registry = Registry(clock=clock)
    for src in sources:
        dq = DeviceQuery(
            DeviceDescriptor(src.name, "bench", f"sim://{src.name}", "inline"),
            ConnectionType.CLIENT_SERVER,
            (QuerySpec(SIGNAL, TICK_MILLIS, 0, cfg.ticks * TICK_MILLIS, f"bench/{src.name}"),),
        )
        registry.register_device(dq, src.address_space())
    buffer = Buffer()
    run_scheduler(registry, buffer, SourcePool(sources), IngestConfig(clock=clock),
                  until=(cfg.ticks - 1) * TICK_MILLIS)
    source_side = sum(s.read_count for s in sources)
    per_source = _per_source(sources)

    delivered = _Counter()
    topics = buffer.topics()

    def sink(_sink_id: int) -> None:
        cursors = dict.fromkeys(topics, 0)
        for topic in topics:
            while True:
                batch = buffer.read(topic, cursors[topic], 64)
                if not batch:
                    break
                cursors[topic] = batch[-1].offset + 1
                delivered.add(len(batch))

    with ThreadPoolExecutor(max_workers=min(cfg.m_sinks, 8)) as pool:
        list(pool.map(sink, range(cfg.m_sinks)))
    buffer_side = delivered.value

    # historic requests: every sink replays the whole retention window again
    before = sum(s.read_count for s in sources)
    with ThreadPoolExecutor(max_workers=min(cfg.m_sinks, 8)) as pool:
        list(pool.map(sink, range(cfg.m_sinks)))
    historic = sum(s.read_count for s in sources) - before

    return BenchReport("B", cfg.n_sources, cfg.m_sinks, cfg.ticks, per_source,
                       source_side, buffer_side, source_side + buffer_side, historic)


def run_bench(cfg: BenchConfig) -> BenchReport:
    return _scenario_a(cfg) if cfg.scenario == "A" else _scenario_b(cfg)
