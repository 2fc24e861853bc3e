"""Envelopes and their wire codecs.

Every encoded envelope starts with one codec-id byte. The JSON codec (0x01)
writes compact JSON with a fixed field order::

    {"v","topic","deviceId","nodeRef","seq","dataType","value",
     "sourceTs","ingestTs","meta"|"metaKey"[,"pipeline"]}

so equal envelopes always encode to identical bytes.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable

from infoengine.errors import CorruptPayload, InvalidValue, UnknownCodec
from infoengine.nodes import DataType

SCHEMA_VERSION = 1
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1


@dataclass(frozen=True)
class Envelope:
    topic: str
    device_id: str
    node_ref: str
    value: Any
    data_type: DataType
    source_ts: int
    ingest_ts: int
    meta: dict | None = field(default=None, hash=False)
    meta_key: str | None = None
    seq: int = 0
    schema_version: int = SCHEMA_VERSION
    pipeline: str | None = None

    def __post_init__(self):
        if (self.meta is None) == (self.meta_key is None):
            raise InvalidValue("meta", "exactly one of meta and metaKey must be set")
        object.__setattr__(self, "data_type", DataType(self.data_type))

    @property
    def is_reference(self) -> bool:
        return self.meta_key is not None


# -- value helpers ----------------------------------------------------------


def value_to_json(value: Any, data_type: DataType) -> Any:
    if data_type is DataType.FLOAT64:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidValue("value", f"float64 expects a number, got {value!r}")
        return float(value)
    if data_type is DataType.INT64:
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidValue("value", f"int64 expects an integer, got {value!r}")
        if not INT64_MIN <= value <= INT64_MAX:
            raise InvalidValue("value", "int64 out of range")
        return value
    if data_type is DataType.BOOLEAN:
        if not isinstance(value, bool):
            raise InvalidValue("value", f"boolean expects a bool, got {value!r}")
        return value
    if data_type is DataType.STRING:
        if not isinstance(value, str):
            raise InvalidValue("value", f"string expects str, got {value!r}")
        return value
    if not isinstance(value, (bytes, bytearray)):
        raise InvalidValue("value", f"bytes expects bytes, got {value!r}")
    return base64.b64encode(bytes(value)).decode("ascii")


def value_from_json(raw: Any, data_type: DataType) -> Any:
    if data_type is DataType.FLOAT64:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise CorruptPayload("float64 value is not a number")
        return float(raw)
    if data_type is DataType.INT64:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise CorruptPayload("int64 value is not an integer")
        return raw
    if data_type is DataType.BOOLEAN:
        if not isinstance(raw, bool):
            raise CorruptPayload("boolean value is not a bool")
        return raw
    if data_type is DataType.STRING:
        if not isinstance(raw, str):
            raise CorruptPayload("string value is not a string")
        return raw
    try:
        return base64.b64decode(raw, validate=True)
    except (TypeError, ValueError):
        raise CorruptPayload("bytes value is not base64") from None


# -- codecs -----------------------------------------------------------------


class JsonCodec:
    codec_id = 0x01
    name = "json"

    def encode(self, e: Envelope) -> bytes:
        doc: dict[str, Any] = {
            "v": e.schema_version,
            "topic": e.topic,
            "deviceId": e.device_id,
            "nodeRef": e.node_ref,
            "seq": e.seq,
            "dataType": e.data_type.value,
            "value": value_to_json(e.value, e.data_type),
            "sourceTs": e.source_ts,
            "ingestTs": e.ingest_ts,
        }
        if e.meta is not None:
            doc["meta"] = e.meta
        else:
            doc["metaKey"] = e.meta_key
        if e.pipeline is not None:
            doc["pipeline"] = e.pipeline
        body = json.dumps(doc, separators=(",", ":"), ensure_ascii=False)
        return bytes([self.codec_id]) + body.encode("utf-8")

    def decode(self, body: bytes) -> Envelope:
        try:
            doc = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptPayload(f"undecodable JSON envelope: {exc}") from None
        if not isinstance(doc, dict):
            raise CorruptPayload("envelope is not a JSON object")
        try:
            data_type = DataType(doc["dataType"])
            return Envelope(
                topic=doc["topic"],
                device_id=doc["deviceId"],
                node_ref=doc["nodeRef"],
                value=value_from_json(doc["value"], data_type),
                data_type=data_type,
                source_ts=doc["sourceTs"],
                ingest_ts=doc["ingestTs"],
                meta=doc.get("meta"),
                meta_key=doc.get("metaKey"),
                seq=doc["seq"],
                schema_version=doc["v"],
                pipeline=doc.get("pipeline"),
            )
        except (KeyError, ValueError, InvalidValue) as exc:
            raise CorruptPayload(f"malformed envelope: {exc}") from None


_CODECS: dict[int, Any] = {}
_BY_NAME: dict[str, Any] = {}


def register_codec(codec) -> None:
    _CODECS[codec.codec_id] = codec
    _BY_NAME[codec.name] = codec


register_codec(JsonCodec())


def get_codec(name: str):
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownCodec(name) from None


def encode_envelope(e: Envelope, codec: str = "json") -> bytes:
    return get_codec(codec).encode(e)


def decode_envelope(payload: bytes) -> Envelope:
    if not payload:
        raise CorruptPayload("empty payload")
    codec = _CODECS.get(payload[0])
    if codec is None:
        raise UnknownCodec(f"codec id 0x{payload[0]:02x}")
    return codec.decode(payload[1:])


def encoder_for(e: Envelope, codec: str = "json") -> Callable[[int], bytes]:
    """Encoder closure taking the sequence number assigned at append time."""
    c = get_codec(codec)

    def encode(seq: int) -> bytes:
        return c.encode(replace(e, seq=seq))

    return encode


_META_KEY = re.compile(rb'"metaKey":')


def scan_meta_key(payload: bytes) -> str | None:
    """Metadata key of an encoded reference-mode envelope without decoding it.

    A JSON string cannot contain an unescaped quote, so the literal
    ``"metaKey":`` only occurs as the top-level key.
    """
    if not payload or payload[0] != JsonCodec.codec_id:
        if payload and payload[0] not in _CODECS:
            raise UnknownCodec(f"codec id 0x{payload[0]:02x}")
        if not payload:
            raise CorruptPayload("empty payload")
        return decode_envelope(payload).meta_key
    match = _META_KEY.search(payload)
    if match is None:
        return None
    try:
        text = payload[match.end():].decode("utf-8")
        value, _ = json.JSONDecoder().raw_decode(text)
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptPayload("unterminated metaKey") from None
    if not isinstance(value, str):
        raise CorruptPayload("metaKey is not a string")
    return value
