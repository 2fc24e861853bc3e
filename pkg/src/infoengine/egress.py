"""Egress: replayable subscriptions, node rebuilding, pass-through access."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterator

from infoengine.buffer import Buffer
from infoengine.codec import Envelope, decode_envelope, scan_meta_key
from infoengine.errors import InvalidValue
from infoengine.framing import FrameDecoder, encode_frame
from infoengine.nodes import DataType

log = logging.getLogger(__name__)


class SubscriptionMode(str, Enum):
    FROM_OFFSET = "fromOffset"
    FROM_TIME = "fromTime"
    LIVE = "live"


@dataclass
class Subscription:
    topic: str
    cursor: int
    mode: SubscriptionMode
    evicted_skips: int = 0
    last_gap: bool = False


def subscribe(buffer: Buffer, topic: str, mode: str | SubscriptionMode = "fromOffset",
              value: int = 0) -> Subscription:
    """Open a cursor: at offset ``value``, at the first record ingested at or
    after time ``value``, or (``live``) at the current end of the topic."""
    mode = SubscriptionMode(mode)
    log_ = buffer.topic(topic)
    if mode is SubscriptionMode.FROM_OFFSET:
        if value < 0:
            raise InvalidValue("offset", "must be non-negative")
        cursor = value
    elif mode is SubscriptionMode.FROM_TIME:
        cursor = log_.read_time(value)
    else:
        cursor = log_.next_offset
    return Subscription(topic, cursor, mode)


def next_records(buffer: Buffer, sub: Subscription, max_count: int):
    batch = buffer.read(sub.topic, sub.cursor, max_count)
    sub.last_gap = batch.gap
    if batch.gap:
        skipped = (batch[0].offset if batch else buffer.earliest_offset(sub.topic)) - sub.cursor
        sub.evicted_skips += skipped
        log.warning("subscription on %s fell behind retention; skipped %d records", sub.topic, skipped)
        sub.cursor += skipped
    if batch:
        sub.cursor = batch[-1].offset + 1
    return batch


def next_envelopes(buffer: Buffer, sub: Subscription, max_count: int) -> list[Envelope]:
    """Decode up to ``max_count`` records from the cursor and advance it.

    A cursor behind retention resumes at the earliest offset and sets
    ``sub.last_gap``; it never fails.
    """
    return [decode_envelope(r.payload) for r in next_records(buffer, sub, max_count)]


@dataclass(frozen=True)
class PublishedNode:
    node_ref: str
    value: Any
    data_type: DataType
    source_timestamp: int
    display_name: str
    engineering_unit: str
    address_space_path: str
    provenance_topic: str
    provenance_offset: int

    def to_json(self) -> dict:
        value = self.value
        if isinstance(value, bytes):
            value = value.hex()
        return {
            "nodeRef": self.node_ref,
            "value": value,
            "dataType": self.data_type.value,
            "sourceTimestamp": self.source_timestamp,
            "displayName": self.display_name,
            "engineeringUnit": self.engineering_unit,
            "addressSpacePath": self.address_space_path,
            "provenance": {"topic": self.provenance_topic, "offset": self.provenance_offset},
        }


def rebuild_node(e: Envelope, registry) -> PublishedNode:
    """Merge envelope values with metadata from the envelope or the registry."""
    if e.meta is not None:
        meta = e.meta
    else:
        meta = registry.get_metadata(e.meta_key).to_json()
    return PublishedNode(
        node_ref=e.node_ref,
        value=e.value,
        data_type=e.data_type,
        source_timestamp=e.source_ts,
        display_name=meta.get("displayName", ""),
        engineering_unit=meta.get("engineeringUnit", ""),
        address_space_path=meta.get("addressSpacePath", ""),
        provenance_topic=e.topic,
        provenance_offset=e.seq,
    )


def passthrough_read(buffer: Buffer, topic: str, from_offset: int = 0,
                     max_count: int = 2**31) -> list[tuple[bytes, str | None]]:
    """Raw payloads plus the metadata key found by a header scan; no decoding."""
    return [(r.payload, scan_meta_key(r.payload)) for r in buffer.read(topic, from_offset, max_count)]


def stream_frames(buffer: Buffer, sub: Subscription, max_count: int) -> bytes:
    """Next records of a subscription as length-prefixed frames of raw payloads."""
    return b"".join(encode_frame(r.payload) for r in next_records(buffer, sub, max_count))


def iter_frame_envelopes(chunks) -> Iterator[Envelope]:
    decoder = FrameDecoder()
    for chunk in chunks:
        for frame in decoder.feed(chunk):
            yield decode_envelope(frame)
