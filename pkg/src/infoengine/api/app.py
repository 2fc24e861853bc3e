"""HTTP API over one :class:`~infoengine.engine.Engine`.

Run with ``ie serve`` or ``uvicorn infoengine.api.app:app`` (engine built
from ``IE_DATA_DIR``).
"""

from __future__ import annotations

import base64
import json
from typing import Optional

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response

from infoengine import egress, errors
from infoengine.api.schemas import (
    BenchReportOut,
    BenchRequest,
    EstimateRequest,
    MetadataBody,
    PipelineRunRequest,
    RegisterRequest,
    RunRequest,
    SubscribeRequest,
    SubscriptionOut,
    TopicOut,
    TrajectoryRequest,
    envelope_json,
)
from infoengine.bench import BenchConfig
from infoengine.codec import decode_envelope
from infoengine.engine import Engine
from infoengine.nodes import DataType
from infoengine.query_model import estimate_volume
from infoengine.registry import DeviceRecord, MetadataEntry
from infoengine.serving import TrajectoryQuery, rows_json, trajectory_csv, trajectory_json

NOT_FOUND = (
    errors.UnknownTopic,
    errors.UnknownDevice,
    errors.UnknownMetadataKey,
    errors.UnresolvableNode,
)


def _status_for(exc: errors.EngineError) -> int:
    if isinstance(exc, errors.ValidationError):
        return 400
    if isinstance(exc, NOT_FOUND):
        return 404
    if isinstance(exc, errors.SourceUnavailable):
        return 503
    return 409


def _doc_text(document) -> str:
    return document if isinstance(document, str) else json.dumps(document)


def _device_json(r: DeviceRecord) -> dict:
    out = r.to_json()
    out["schedule"] = [dict(e.to_json(), nodeRef=e.node_ref.canonical) for e in r.schedule]
    return out


def create_app(engine: Engine | None = None) -> FastAPI:
    engine = engine if engine is not None else Engine.from_env()
    app = FastAPI(title="Information Engine", version="0.1.0")
    app.state.engine = engine

    @app.exception_handler(errors.EngineError)
    async def _engine_error(_request: Request, exc: errors.EngineError):
        return JSONResponse(
            status_code=_status_for(exc),
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.get("/health")
    def health():
        return engine.describe()

    # -- registry -----------------------------------------------------------

    @app.post("/devices")
    def register(body: RegisterRequest):
        records = engine.register(_doc_text(body.document), body.base_dir)
        return [_device_json(r) for r in records]

    @app.get("/devices")
    def list_devices():
        return [_device_json(r) for r in engine.registry.list_devices()]

    @app.post("/devices/{device_id}/suspend")
    def suspend(device_id: str):
        engine.registry.suspend_device(device_id)
        return _device_json(engine.registry.get_device(device_id))

    @app.post("/devices/{device_id}/resume")
    def resume(device_id: str):
        engine.registry.resume_device(device_id)
        return _device_json(engine.registry.get_device(device_id))

    @app.get("/schedule")
    def schedule():
        return [dict(e.to_json(), nodeRef=e.node_ref.canonical)
                for e in engine.registry.active_schedule()]

    @app.get("/metadata")
    def metadata_keys():
        return engine.registry.metadata_keys()

    @app.get("/metadata/{key:path}")
    def get_metadata(key: str):
        return engine.registry.get_metadata(key).to_json()

    @app.put("/metadata/{key:path}")
    def put_metadata(key: str, body: MetadataBody):
        entry = MetadataEntry(key, body.display_name, body.engineering_unit,
                              DataType(body.data_type), body.address_space_path, tuple(body.tags))
        engine.registry.update_metadata(key, entry)
        return engine.registry.get_metadata(key).to_json()

    # -- ingest and buffer --------------------------------------------------

    @app.post("/run")
    def run(body: RunRequest):
        return engine.run(body.until, body.metadata).to_json()

    @app.get("/topics", response_model=list[TopicOut])
    def topics():
        return engine.topics()

    @app.get("/records")
    def records(topic: str, from_offset: Optional[int] = Query(None, alias="fromOffset", ge=0),
                max_count: int = Query(100, alias="maxCount", ge=0)):
        return [envelope_json(e) for e in engine.tail(topic, from_offset, max_count)]

    @app.get("/query")
    def query(topic: str, t0: int = Query(alias="from"), t1: int = Query(alias="to"),
              table: bool = False):
        if table:
            return json.loads(rows_json(engine.query_table(topic, t0, t1)))
        return [envelope_json(e) for e in engine.query(topic, t0, t1)]

    @app.post("/trajectory")
    def trajectory(body: TrajectoryRequest):
        q = TrajectoryQuery(tuple(body.topics), body.t0, body.t1, body.grid_millis, body.method)
        vectors = engine.trajectory(q, body.from_tables)
        if body.format == "csv":
            return PlainTextResponse(trajectory_csv(vectors, sorted(q.topics)), media_type="text/csv")
        return Response(trajectory_json(vectors), media_type="application/json")

    @app.post("/estimate")
    def estimate(body: EstimateRequest):
        return engine.estimate(_doc_text(body.document), body.base_dir, body.sample_bytes)

    @app.get("/volume")
    def volume(sample_bytes: int = Query(alias="sampleBytes", ge=1),
               rate_hz: float = Query(alias="rateHz", gt=0),
               horizon: str = "day"):
        v = estimate_volume(sample_bytes, rate_hz, horizon)
        return {"bytes": v.bytes, "human": v.human}

    # -- transform ----------------------------------------------------------

    @app.post("/pipelines/run")
    def pipeline_run(body: PipelineRunRequest):
        return engine.run_pipeline(body.spec, body.from_ts, body.to_ts).to_json()

    # -- egress -------------------------------------------------------------

    @app.post("/subscriptions", response_model=SubscriptionOut)
    def subscribe(body: SubscribeRequest):
        sub_id, sub = engine.subscribe(body.topic, body.mode, body.value)
        return {"id": sub_id, "topic": sub.topic, "cursor": sub.cursor, "mode": sub.mode.value}

    def _sub(sub_id: str) -> egress.Subscription:
        try:
            return engine.subscriptions[sub_id]
        except KeyError:
            raise errors.UnknownTopic(f"no subscription {sub_id}") from None

    @app.get("/subscriptions/{sub_id}/next")
    def sub_next(sub_id: str, max_count: int = Query(100, alias="maxCount", ge=0)):
        sub = _sub(sub_id)
        envelopes = egress.next_envelopes(engine.buffer, sub, max_count)
        return {"envelopes": [envelope_json(e) for e in envelopes],
                "cursor": sub.cursor, "gap": sub.last_gap}

    @app.get("/subscriptions/{sub_id}/frames")
    def sub_frames(sub_id: str, max_count: int = Query(100, alias="maxCount", ge=0)):
        data = egress.stream_frames(engine.buffer, _sub(sub_id), max_count)
        return Response(data, media_type="application/octet-stream")

    @app.get("/nodes")
    def nodes(topic: str, offset: int = Query(ge=0)):
        batch = engine.buffer.read(topic, offset, 1)
        if not batch or batch[0].offset != offset:
            raise errors.UnknownTopic(f"{topic} has no record at offset {offset}")
        return egress.rebuild_node(decode_envelope(batch[0].payload), engine.registry).to_json()

    @app.get("/passthrough")
    def passthrough(topic: str, from_offset: int = Query(0, alias="fromOffset", ge=0),
                    max_count: int = Query(100, alias="maxCount", ge=0)):
        return [{"payload": base64.b64encode(p).decode("ascii"), "metadataKey": key}
                for p, key in egress.passthrough_read(engine.buffer, topic, from_offset, max_count)]

    # -- bench --------------------------------------------------------------

    @app.post("/bench", response_model=BenchReportOut)
    def bench(body: BenchRequest):
        return engine.bench(BenchConfig(body.n, body.m, body.k, body.scenario)).to_json()

    return app


def __getattr__(name: str):
    # lazily built so importing the module never touches IE_DATA_DIR
    if name == "app":
        return create_app()
    raise AttributeError(name)
