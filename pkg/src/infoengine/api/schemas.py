"""Request and response models for the HTTP API."""

from __future__ import annotations

import base64
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from infoengine.codec import Envelope


class _Model(BaseModel):
    model_config = ConfigDict(populate_by_name=True, extra="forbid")


class RegisterRequest(_Model):
    document: Union[str, dict[str, Any]]
    base_dir: Optional[str] = Field(None, alias="baseDir")


class EstimateRequest(RegisterRequest):
    sample_bytes: int = Field(1024, alias="sampleBytes", ge=1)


class RunRequest(_Model):
    until: int
    metadata: Literal["inline", "reference"] = "inline"


class TrajectoryRequest(_Model):
    topics: list[str] = Field(min_length=1)
    t0: int
    t1: int
    grid_millis: int = Field(alias="gridMillis", ge=1)
    method: Literal["linear", "hold"] = "linear"
    format: Literal["json", "csv"] = "json"
    from_tables: bool = Field(False, alias="fromTables")


class PipelineRunRequest(_Model):
    spec: dict[str, Any]
    from_ts: Optional[int] = Field(None, alias="from")
    to_ts: Optional[int] = Field(None, alias="to")


class BenchRequest(_Model):
    scenario: Literal["A", "B"]
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    k: int = Field(ge=1)


class SubscribeRequest(_Model):
    topic: str
    mode: Literal["fromOffset", "fromTime", "live"] = "fromOffset"
    value: int = 0


class MetadataBody(_Model):
    display_name: str = Field(alias="displayName")
    engineering_unit: str = Field(alias="engineeringUnit")
    data_type: Literal["float64", "int64", "boolean", "string", "bytes"] = Field(alias="dataType")
    address_space_path: str = Field(alias="addressSpacePath")
    tags: list[str] = []
    metadata_key: Optional[str] = Field(None, alias="metadataKey")


class TopicOut(BaseModel):
    name: str
    earliestOffset: int
    nextOffset: int
    retentionMillis: int


class SubscriptionOut(BaseModel):
    id: str
    topic: str
    cursor: int
    mode: str


class BenchReportOut(BaseModel):
    scenario: str
    n: int
    m: int
    k: int
    perSourceReads: int
    sourceSideMessages: int
    bufferSideMessages: int
    totalNetworkMessages: int
    historicSourceReads: int


def envelope_json(e: Envelope) -> dict:
    value = e.value
    if isinstance(value, (bytes, bytearray)):
        value = base64.b64encode(value).decode("ascii")
    out = {
        "topic": e.topic,
        "seq": e.seq,
        "deviceId": e.device_id,
        "nodeRef": e.node_ref,
        "dataType": e.data_type.value,
        "value": value,
        "sourceTs": e.source_ts,
        "ingestTs": e.ingest_ts,
    }
    if e.meta is not None:
        out["meta"] = e.meta
    else:
        out["metaKey"] = e.meta_key
    if e.pipeline is not None:
        out["pipeline"] = e.pipeline
    return out
