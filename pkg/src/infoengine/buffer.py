"""Embedded topic logs: append-only, offset addressed, retention bounded.

In ``memory`` mode records live in lists. In ``disk`` mode every topic is a
directory of segment files::

    <data_dir>/<escaped topic>/<base offset>.log   4-byte BE length + payload
    <data_dir>/<escaped topic>/<base offset>.idx   (offset, position, ingestTs)
    <data_dir>/<escaped topic>/topic.json          name, retention, earliest offset

Offsets are contiguous and never reused. Eviction only drops records from
the head; whole segments are deleted once all their records are gone.
"""

from __future__ import annotations

import bisect
import json
import logging
import os
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from infoengine.errors import InvalidValue, RetentionViolation, UnknownTopic

log = logging.getLogger(__name__)

DEFAULT_RETENTION_MILLIS = 7 * 24 * 3600 * 1000
SEGMENT_RECORDS = 4096
_LEN = struct.Struct(">I")
_IDX = struct.Struct(">QQq")


@dataclass(frozen=True)
class Record:
    offset: int
    ingest_ts: int
    payload: bytes


class RecordBatch(list):
    """Records returned by a read; ``gap`` is set when the requested offset
    had already been evicted and reading resumed at the earliest offset."""

    def __init__(self, records=(), requested: int = 0, gap: bool = False):
        super().__init__(records)
        self.requested = requested
        self.gap = gap


def escape_topic(name: str) -> str:
    escaped = name.replace("%", "%25").replace("/", "%2F")
    if escaped.startswith("."):
        escaped = "%2E" + escaped[1:]
    return escaped


def unescape_topic(escaped: str) -> str:
    if escaped.startswith("%2E"):
        escaped = "." + escaped[3:]
    return escaped.replace("%2F", "/").replace("%25", "%")


class _Segment:
    def __init__(self, directory: Path, base: int):
        self.base = base
        self.log_path = directory / f"{base:020d}.log"
        self.idx_path = directory / f"{base:020d}.idx"
        self.size = self.log_path.stat().st_size if self.log_path.exists() else 0
        self._log = open(self.log_path, "ab")
        self._idx = open(self.idx_path, "ab")

    def append(self, offset: int, ingest_ts: int, payload: bytes) -> int:
        position = self.size
        self._log.write(_LEN.pack(len(payload)) + payload)
        self._log.flush()
        self._idx.write(_IDX.pack(offset, position, ingest_ts))
        self._idx.flush()
        self.size += _LEN.size + len(payload)
        return position

    def read(self, position: int) -> bytes:
        with open(self.log_path, "rb") as fh:
            fh.seek(position)
            (length,) = _LEN.unpack(fh.read(_LEN.size))
            return fh.read(length)

    def index(self) -> list[tuple[int, int, int]]:
        data = self.idx_path.read_bytes()
        return [_IDX.unpack_from(data, i) for i in range(0, len(data) - len(data) % _IDX.size, _IDX.size)]

    def sync(self) -> None:
        for fh in (self._log, self._idx):
            fh.flush()
            os.fsync(fh.fileno())

    def close(self) -> None:
        self._log.close()
        self._idx.close()

    def delete(self) -> None:
        self.close()
        self.log_path.unlink(missing_ok=True)
        self.idx_path.unlink(missing_ok=True)


class TopicLog:
    def __init__(self, name: str, retention_millis: int, directory: Path | None = None,
                 segment_records: int = SEGMENT_RECORDS):
        if retention_millis < 1:
            raise InvalidValue("retentionMillis", "must be ≥ 1")
        self.name = name
        self.retention_millis = retention_millis
        self.directory = directory
        self.segment_records = segment_records
        self.earliest_offset = 0
        self.next_offset = 0
        self.lock = threading.RLock()
        # parallel arrays indexed by offset - earliest_offset
        self._ts: list[int] = []
        self._payloads: list[bytes] = []
        self._locs: list[tuple[_Segment, int]] = []
        self._segments: list[_Segment] = []
        if directory is not None:
            directory.mkdir(parents=True, exist_ok=True)
            self._recover()

    @property
    def on_disk(self) -> bool:
        return self.directory is not None

    # -- disk bookkeeping ---------------------------------------------------

    def _meta_path(self) -> Path:
        return self.directory / "topic.json"

    def _write_meta(self) -> None:
        tmp = self._meta_path().with_suffix(".tmp")
        tmp.write_text(json.dumps({
            "name": self.name,
            "retentionMillis": self.retention_millis,
            "earliestOffset": self.earliest_offset,
        }))
        os.replace(tmp, self._meta_path())

    def _recover(self) -> None:
        meta = self._meta_path()
        earliest = 0
        if meta.exists():
            doc = json.loads(meta.read_text())
            self.retention_millis = doc["retentionMillis"]
            earliest = doc["earliestOffset"]
        bases = sorted(int(p.stem) for p in self.directory.glob("*.log"))
        for base in bases:
            seg = _Segment(self.directory, base)
            self._segments.append(seg)
            for offset, position, ts in seg.index():
                if offset < earliest:
                    continue
                if not self._ts:
                    self.earliest_offset = offset
                self._ts.append(ts)
                self._locs.append((seg, position))
                self.next_offset = offset + 1
        if not self._ts:
            self.earliest_offset = self.next_offset = max(earliest, self.next_offset)
        self._write_meta()

    def _active_segment(self) -> _Segment:
        if self._segments:
            seg = self._segments[-1]
            if self.next_offset - seg.base < self.segment_records:
                return seg
            seg.sync()
        seg = _Segment(self.directory, self.next_offset)
        self._segments.append(seg)
        return seg

    # -- operations ---------------------------------------------------------

    def append_with(self, ingest_ts: int, build: Callable[[int], bytes]) -> int:
        with self.lock:
            if self._ts:
                last = self._ts[-1]
                if ingest_ts < last - self.retention_millis:
                    raise RetentionViolation(
                        f"{self.name}: ingest time {ingest_ts} is older than the "
                        f"retention window ({last - self.retention_millis})"
                    )
                # keep record timestamps non-decreasing under producer clock skew
                ingest_ts = max(ingest_ts, last)
            self._evict(ingest_ts)
            offset = self.next_offset
            payload = build(offset)
            if not payload:
                raise InvalidValue("payload", "must be non-empty")
            if self.on_disk:
                seg = self._active_segment()
                self._locs.append((seg, seg.append(offset, ingest_ts, payload)))
            else:
                self._payloads.append(payload)
            self._ts.append(ingest_ts)
            self.next_offset += 1
            return offset

    def _payload(self, i: int) -> bytes:
        if self.on_disk:
            seg, position = self._locs[i]
            return seg.read(position)
        return self._payloads[i]

    def read(self, from_offset: int, max_count: int) -> RecordBatch:
        if from_offset < 0 or max_count < 0:
            raise InvalidValue("read", "offset and count must be non-negative")
        with self.lock:
            gap = from_offset < self.earliest_offset
            start = max(from_offset, self.earliest_offset)
            stop = min(self.next_offset, start + max_count)
            base = self.earliest_offset
            records = [
                Record(off, self._ts[off - base], self._payload(off - base))
                for off in range(start, stop)
            ]
        return RecordBatch(records, from_offset, gap)

    def read_time(self, from_ts: int) -> int:
        with self.lock:
            return self.earliest_offset + bisect.bisect_left(self._ts, from_ts)

    def _evict(self, now: int) -> int:
        cutoff = now - self.retention_millis
        count = bisect.bisect_left(self._ts, cutoff)
        if count == 0:
            return 0
        del self._ts[:count]
        if self.on_disk:
            del self._locs[:count]
        else:
            del self._payloads[:count]
        self.earliest_offset += count
        if self.on_disk:
            while len(self._segments) > 1 and self._segments[1].base <= self.earliest_offset:
                self._segments.pop(0).delete()
            if not self._ts and self._segments and self._segments[-1].base < self.earliest_offset:
                # everything evicted: a fresh segment starts at next_offset
                self._segments.pop().delete()
            self._write_meta()
        return count

    def evict(self, now: int) -> int:
        with self.lock:
            return self._evict(now)

    def timestamps(self) -> list[int]:
        with self.lock:
            return list(self._ts)

    def sync(self) -> None:
        with self.lock:
            for seg in self._segments:
                seg.sync()

    def close(self) -> None:
        with self.lock:
            for seg in self._segments:
                seg.close()


class Buffer:
    """Collection of topic logs; memory-backed unless ``data_dir`` is given."""

    def __init__(self, data_dir: str | Path | None = None,
                 default_retention: int = DEFAULT_RETENTION_MILLIS,
                 segment_records: int = SEGMENT_RECORDS):
        self.data_dir = Path(data_dir) if data_dir is not None else None
        self.default_retention = default_retention
        self.segment_records = segment_records
        self._topics: dict[str, TopicLog] = {}
        self._lock = threading.Lock()
        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            for path in sorted(self.data_dir.iterdir()):
                if (path / "topic.json").exists():
                    name = json.loads((path / "topic.json").read_text())["name"]
                    self._topics[name] = self._open(name, self.default_retention)

    @property
    def mode(self) -> str:
        return "memory" if self.data_dir is None else "disk"

    def _open(self, name: str, retention: int) -> TopicLog:
        directory = self.data_dir / escape_topic(name) if self.data_dir is not None else None
        return TopicLog(name, retention, directory, self.segment_records)

    def ensure_topic(self, name: str, retention_millis: int | None = None) -> TopicLog:
        """Create ``name`` if needed; a larger retention widens an existing topic."""
        if not name:
            raise InvalidValue("topic", "must be non-empty")
        with self._lock:
            log_ = self._topics.get(name)
            if log_ is None:
                log_ = self._open(name, retention_millis or self.default_retention)
                self._topics[name] = log_
                if log_.on_disk:
                    log_._write_meta()
                return log_
        if retention_millis is not None and retention_millis > log_.retention_millis:
            with log_.lock:
                log_.retention_millis = retention_millis
                if log_.on_disk:
                    log_._write_meta()
        return log_

    def topic(self, name: str) -> TopicLog:
        try:
            return self._topics[name]
        except KeyError:
            raise UnknownTopic(name) from None

    def has_topic(self, name: str) -> bool:
        return name in self._topics

    def topics(self) -> list[str]:
        return sorted(self._topics)

    def append(self, topic: str, payload: bytes, ingest_ts: int) -> int:
        return self.append_with(topic, ingest_ts, lambda _offset: payload)

    def append_with(self, topic: str, ingest_ts: int, build: Callable[[int], bytes]) -> int:
        """Append the payload ``build(offset)``; lets producers embed the offset."""
        return self.ensure_topic(topic).append_with(ingest_ts, build)

    def read(self, topic: str, from_offset: int = 0, max_count: int = 2**31) -> RecordBatch:
        return self.topic(topic).read(from_offset, max_count)

    def read_time(self, topic: str, from_ts: int) -> int:
        return self.topic(topic).read_time(from_ts)

    def evict(self, topic: str, now: int) -> int:
        return self.topic(topic).evict(now)

    def evict_all(self, now: int) -> dict[str, int]:
        return {name: self.evict(name, now) for name in self.topics()}

    def earliest_offset(self, topic: str) -> int:
        return self.topic(topic).earliest_offset

    def next_offset(self, topic: str) -> int:
        return self.topic(topic).next_offset

    def sync(self) -> None:
        for log_ in list(self._topics.values()):
            log_.sync()

    def close(self) -> None:
        for log_ in list(self._topics.values()):
            log_.close()
