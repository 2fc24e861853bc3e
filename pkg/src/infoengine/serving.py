"""Serving stage: sorted series tables, state trajectories, and export."""

from __future__ import annotations

import bisect
import csv
import io
import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from infoengine.buffer import Buffer
from infoengine.codec import decode_envelope
from infoengine.errors import IncompatibleDataType, InvalidValue, IoFailure, UnsortedSeries
from infoengine.transform import align_series


@dataclass(frozen=True)
class Row:
    timestamp: int
    value: float
    source_topic: str


class SeriesTable:
    """Rows kept sorted by ``(timestamp, sourceTopic)``; that pair is the key."""

    def __init__(self, name: str):
        self.name = name
        self._keys: list[tuple[int, str]] = []
        self._values: list[float] = []
        self._lock = threading.Lock()

    def upsert(self, timestamp: int, value: float, source_topic: str) -> None:
        key = (timestamp, source_topic)
        with self._lock:
            i = bisect.bisect_left(self._keys, key)
            if i < len(self._keys) and self._keys[i] == key:
                self._values[i] = value
            else:
                self._keys.insert(i, key)
                self._values.insert(i, value)

    def range_query(self, t0: int, t1: int) -> list[Row]:
        """Rows with ``t0 <= timestamp < t1``."""
        with self._lock:
            lo = bisect.bisect_left(self._keys, (t0,))
            hi = bisect.bisect_left(self._keys, (t1,))
            return [Row(self._keys[i][0], self._values[i], self._keys[i][1]) for i in range(lo, hi)]

    def rows(self) -> list[Row]:
        with self._lock:
            return [Row(t, v, s) for (t, s), v in zip(self._keys, self._values)]

    def __len__(self) -> int:
        return len(self._keys)


class ServingStore:
    """Named tables; persisted to one JSON file when ``path`` is given."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._tables: dict[str, SeriesTable] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            doc = json.loads(self.path.read_text())
            for name, rows in doc["tables"].items():
                table = self.table(name)
                for t, v, s in rows:
                    table.upsert(t, v, s)

    def table(self, name: str) -> SeriesTable:
        with self._lock:
            if name not in self._tables:
                self._tables[name] = SeriesTable(name)
            return self._tables[name]

    def has_table(self, name: str) -> bool:
        return name in self._tables

    def tables(self) -> list[str]:
        return sorted(self._tables)

    def upsert(self, table: str, timestamp: int, value: float, source_topic: str) -> None:
        self.table(table).upsert(timestamp, value, source_topic)

    def range_query(self, table: str, t0: int, t1: int) -> list[Row]:
        if table not in self._tables:
            return []
        return self._tables[table].range_query(t0, t1)

    def flush(self) -> None:
        if self.path is None:
            return
        doc = {"tables": {
            name: [[r.timestamp, r.value, r.source_topic] for r in self._tables[name].rows()]
            for name in self.tables()
        }}
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(doc))
        os.replace(tmp, self.path)


# -- trajectories -----------------------------------------------------------


@dataclass(frozen=True)
class StateVector:
    timestamp: int
    components: tuple[tuple[str, float], ...]

    @property
    def topics(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.components)

    @property
    def values(self) -> tuple[float, ...]:
        return tuple(v for _, v in self.components)


@dataclass(frozen=True)
class TrajectoryQuery:
    topics: tuple[str, ...]
    t0: int
    t1: int
    grid_millis: int
    method: str = "linear"

    def __post_init__(self):
        object.__setattr__(self, "topics", tuple(self.topics))
        if not self.topics:
            raise InvalidValue("topics", "must be non-empty")
        if len(set(self.topics)) != len(self.topics):
            raise InvalidValue("topics", "must be distinct")
        if self.t0 >= self.t1:
            raise InvalidValue("t1", "must be greater than t0")


def topic_series(buffer: Buffer, topic: str, t0: int, t1: int) -> list[tuple[int, float]]:
    """Numeric ``(sourceTs, value)`` pairs of a topic with ``t0 <= sourceTs <= t1``."""
    series = []
    for record in buffer.read(topic):
        e = decode_envelope(record.payload)
        if not t0 <= e.source_ts <= t1:
            continue
        if not e.data_type.numeric:
            raise IncompatibleDataType(f"topic {topic} carries {e.data_type.value} values")
        series.append((e.source_ts, float(e.value)))
    series.sort(key=lambda p: p[0])
    for (a, _), (b, _) in zip(series, series[1:]):
        if a == b:
            raise UnsortedSeries(f"topic {topic} has two samples at {a}")
    return series


def table_series(serving: ServingStore, table: str, t0: int, t1: int) -> list[tuple[int, float]]:
    rows = [r for r in serving.range_query(table, t0, t1 + 1)]
    if len({r.source_topic for r in rows}) > 1:
        raise InvalidValue("topics", f"table {table} mixes several source topics")
    return [(r.timestamp, r.value) for r in rows]


def assemble_trajectory(q: TrajectoryQuery, buffer: Buffer, registry=None,
                        serving: ServingStore | None = None,
                        from_tables: bool = False) -> list[StateVector]:
    """Holistic state samples: every topic aligned on the query grid.

    Reads the buffer by default; ``from_tables`` reads serving tables of the
    same names instead.
    """
    if from_tables:
        if serving is None:
            raise InvalidValue("serving", "table-backed assembly needs a serving store")
        series = {t: table_series(serving, t, q.t0, q.t1) for t in q.topics}
    else:
        for topic in q.topics:
            buffer.topic(topic)
        series = {t: topic_series(buffer, t, q.t0, q.t1) for t in q.topics}
    rows = align_series(series, q.grid_millis, q.method)
    topics = sorted(q.topics)
    return [StateVector(t, tuple(zip(topics, values))) for t, values in rows]


# -- export -----------------------------------------------------------------


def trajectory_csv(trajectory: Sequence[StateVector], topics: Sequence[str] | None = None) -> str:
    if topics is None:
        topics = list(trajectory[0].topics) if trajectory else []
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["timestamp", *topics])
    for sv in trajectory:
        writer.writerow([sv.timestamp, *(repr(v) for v in sv.values)])
    return out.getvalue()


def trajectory_json(trajectory: Sequence[StateVector]) -> str:
    return json.dumps([
        {"ts": sv.timestamp, "values": dict(sv.components)} for sv in trajectory
    ])


def rows_csv(rows: Iterable[Row]) -> str:
    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["timestamp", "value", "sourceTopic"])
    for r in rows:
        writer.writerow([r.timestamp, repr(r.value), r.source_topic])
    return out.getvalue()


def rows_json(rows: Iterable[Row]) -> str:
    return json.dumps([{"ts": r.timestamp, "value": r.value, "sourceTopic": r.source_topic}
                       for r in rows])


def export(data, fmt: str, destination: str | Path, topics: Sequence[str] | None = None) -> int:
    """Write a trajectory (or table rows) as CSV or JSON; returns bytes written."""
    if fmt not in ("csv", "json"):
        raise InvalidValue("format", "must be csv or json")
    data = list(data)
    is_rows = bool(data) and isinstance(data[0], Row)
    if fmt == "csv":
        text = rows_csv(data) if is_rows else trajectory_csv(data, topics)
    else:
        text = rows_json(data) if is_rows else trajectory_json(data)
    payload = text.encode("utf-8")
    try:
        with open(destination, "wb") as fh:
            fh.write(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {destination}: {exc}") from exc
    return len(payload)


def parse_trajectory_csv(text: str) -> list[StateVector]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    topics = header[1:]
    return [
        StateVector(int(row[0]), tuple(zip(topics, (float(v) for v in row[1:]))))
        for row in reader
    ]


def parse_trajectory_json(text: str) -> list[StateVector]:
    return [
        StateVector(item["ts"], tuple(sorted((k, float(v)) for k, v in item["values"].items())))
        for item in json.loads(text)
    ]
