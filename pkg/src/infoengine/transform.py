"""Deterministic operator pipelines over buffered envelopes.

A pipeline reads explicit offset ranges of its input topics, applies a fixed
chain of operators per input topic, and writes the result to a sink topic or
a serving table. Same input records and spec give byte-identical output.

Operator JSON forms::

    {"kind": "filter", "field": "value" | "meta.<name>", "op": "gt", "operand": 3}
    {"kind": "mapScale", "factor": 1.8, "offset": 32, "newUnit": "degF"}
    {"kind": "aggregate", "fn": "mean", "windowMillis": 1000}
    {"kind": "resample", "gridMillis": 100, "method": "linear"}
    {"kind": "align", "gridMillis": 100, "method": "hold"}
"""

from __future__ import annotations

import bisect
import json
import math
import operator
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from infoengine.buffer import Buffer
from infoengine.codec import Envelope, decode_envelope, encoder_for
from infoengine.errors import (
    EmptyIntersection,
    EmptySeries,
    IncompatibleDataType,
    InvalidValue,
    MalformedDocument,
    MissingField,
    UnsortedSeries,
)
from infoengine.nodes import DataType

Series = list[tuple[int, float]]

METHODS = ("linear", "hold")
AGGREGATES = ("mean", "min", "max", "sum", "count")
COMPARISONS = {
    "eq": operator.eq, "ne": operator.ne,
    "gt": operator.gt, "ge": operator.ge,
    "lt": operator.lt, "le": operator.le,
}


# -- series primitives ------------------------------------------------------


def _check_series(series: Sequence[tuple[int, float]]) -> None:
    if not series:
        raise EmptySeries("series is empty")
    for (a, _), (b, _) in zip(series, series[1:]):
        if b <= a:
            raise UnsortedSeries(f"timestamps not strictly increasing at {a} -> {b}")


def _check_method(method: str) -> None:
    if method not in METHODS:
        raise InvalidValue("method", f"must be one of {METHODS}")


def _check_grid(grid_millis: int) -> None:
    if not isinstance(grid_millis, int) or grid_millis < 1:
        raise InvalidValue("gridMillis", "must be an integer ≥ 1")


def grid_points(lo: int, hi: int, grid_millis: int) -> list[int]:
    """Multiples of ``grid_millis`` in ``[lo, hi]``."""
    first = -(-lo // grid_millis) * grid_millis
    return list(range(first, hi + 1, grid_millis))


def sample_at(series: Sequence[tuple[int, float]], times: Sequence[int], method: str) -> list[float]:
    """Values of ``series`` at ascending ``times`` inside its covered range."""
    ts = [t for t, _ in series]
    out = []
    for t in times:
        i = bisect.bisect_right(ts, t) - 1
        if i < 0 or t > ts[-1]:
            raise InvalidValue("t", f"{t} outside series range [{ts[0]}, {ts[-1]}]")
        t0, v0 = series[i]
        if t == t0 or method == "hold":
            out.append(v0)
            continue
        t1, v1 = series[i + 1]
        out.append(v0 + (v1 - v0) * ((t - t0) / (t1 - t0)))
    return out


def resample_series(series: Sequence[tuple[int, float]], grid_millis: int,
                    method: str = "linear") -> Series:
    """Resample onto grid points ``g * grid_millis`` inside ``[first, last]``.

    ``linear`` interpolates between the bracketing samples, ``hold`` repeats
    the previous sample. Nothing is extrapolated beyond the observed range.
    """
    _check_series(series)
    _check_grid(grid_millis)
    _check_method(method)
    times = grid_points(series[0][0], series[-1][0], grid_millis)
    return list(zip(times, sample_at(series, times, method)))


def align_series(series_by_topic: Mapping[str, Sequence[tuple[int, float]]],
                 grid_millis: int, method: str = "linear") -> list[tuple[int, tuple[float, ...]]]:
    """Resample every series onto the shared grid of their common time range.

    Vector components follow the lexicographic order of the topic names.
    """
    _check_grid(grid_millis)
    _check_method(method)
    if not series_by_topic:
        raise InvalidValue("seriesByTopic", "needs at least one series")
    topics = sorted(series_by_topic)
    for topic in topics:
        _check_series(series_by_topic[topic])
    lo = max(series_by_topic[t][0][0] for t in topics)
    hi = min(series_by_topic[t][-1][0] for t in topics)
    times = grid_points(lo, hi, grid_millis) if lo <= hi else []
    if not times:
        raise EmptyIntersection(f"no shared grid point between {lo} and {hi}")
    columns = [sample_at(series_by_topic[t], times, method) for t in topics]
    return [(t, tuple(col[i] for col in columns)) for i, t in enumerate(times)]


# -- operator specs ---------------------------------------------------------


@dataclass(frozen=True)
class OperatorSpec:
    kind: str
    params: dict = field(default_factory=dict, hash=False)

    def to_json(self) -> dict:
        return {"kind": self.kind, **self.params}


_OPERATOR_PARAMS = {
    "filter": ({"field", "op", "operand"}, set()),
    "mapScale": ({"factor"}, {"offset", "newUnit"}),
    "aggregate": ({"fn", "windowMillis"}, set()),
    "resample": ({"gridMillis"}, {"method"}),
    "align": ({"gridMillis"}, {"method"}),
}


def parse_operator(raw: Any, path: str = "operator") -> OperatorSpec:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise MissingField(f"{path}.kind")
    kind = raw["kind"]
    if kind not in _OPERATOR_PARAMS:
        raise InvalidValue(f"{path}.kind", f"unknown operator {kind!r}")
    required, optional = _OPERATOR_PARAMS[kind]
    params = {k: v for k, v in raw.items() if k != "kind"}
    unknown = set(params) - required - optional
    if unknown:
        raise InvalidValue(path, f"unknown keys {sorted(unknown)}")
    for key in sorted(required - set(params)):
        raise MissingField(f"{path}.{key}")
    if kind == "filter":
        if params["op"] not in COMPARISONS:
            raise InvalidValue(f"{path}.op", f"must be one of {sorted(COMPARISONS)}")
        if params["field"] != "value" and not str(params["field"]).startswith("meta."):
            raise InvalidValue(f"{path}.field", "must be 'value' or 'meta.<name>'")
    elif kind == "mapScale":
        for key in ("factor", "offset"):
            v = params.get(key, 0)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InvalidValue(f"{path}.{key}", "must be a number")
    elif kind == "aggregate":
        if params["fn"] not in AGGREGATES:
            raise InvalidValue(f"{path}.fn", f"must be one of {AGGREGATES}")
        w = params["windowMillis"]
        if isinstance(w, bool) or not isinstance(w, int) or w < 1:
            raise InvalidValue(f"{path}.windowMillis", "must be an integer ≥ 1")
    else:
        _check_grid(params["gridMillis"])
        params.setdefault("method", "linear")
        _check_method(params["method"])
    return OperatorSpec(kind, params)


@dataclass(frozen=True)
class PipelineSpec:
    name: str
    input_topics: tuple[str, ...]
    operators: tuple[OperatorSpec, ...] = ()
    sink_topic: str | None = None
    sink_table: str | None = None

    def __post_init__(self):
        if not self.name:
            raise InvalidValue("name", "must be non-empty")
        if not self.input_topics:
            raise InvalidValue("inputTopics", "must be non-empty")
        if len(set(self.input_topics)) != len(self.input_topics):
            raise InvalidValue("inputTopics", "duplicate topic")
        if (self.sink_topic is None) == (self.sink_table is None):
            raise InvalidValue("sink", "exactly one of topic and table")
        kinds = [op.kind for op in self.operators]
        if "align" in kinds:
            if kinds.count("align") > 1 or kinds[0] != "align":
                raise InvalidValue("operators", "align may appear once, as the first operator")
            if len(self.input_topics) < 2:
                raise InvalidValue("operators", "align needs at least two input topics")
        if self.sink_topic is not None and self.sink_topic in self.input_topics:
            raise InvalidValue("sink", "sink topic cannot be one of the inputs")

    def to_json(self) -> dict:
        sink = {"topic": self.sink_topic} if self.sink_topic is not None else {"table": self.sink_table}
        return {
            "name": self.name,
            "inputTopics": list(self.input_topics),
            "operators": [op.to_json() for op in self.operators],
            "sink": sink,
        }


def parse_pipeline(raw: Any) -> PipelineSpec:
    if isinstance(raw, (str, bytes)):
        try:
            raw = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedDocument(f"not a JSON document: {exc}") from None
    if not isinstance(raw, dict):
        raise MalformedDocument("pipeline spec must be a JSON object")
    unknown = set(raw) - {"name", "inputTopics", "operators", "sink"}
    if unknown:
        raise InvalidValue("", f"unknown keys {sorted(unknown)}")
    for key in ("name", "inputTopics", "sink"):
        if key not in raw:
            raise MissingField(key)
    sink = raw["sink"]
    if not isinstance(sink, dict) or len(sink) != 1 or not set(sink) <= {"topic", "table"}:
        raise InvalidValue("sink", 'must be {"topic": ...} or {"table": ...}')
    if not isinstance(raw["inputTopics"], list):
        raise InvalidValue("inputTopics", "must be a list")
    operators = tuple(
        parse_operator(op, f"operators[{i}]") for i, op in enumerate(raw.get("operators", []))
    )
    return PipelineSpec(
        name=raw["name"],
        input_topics=tuple(raw["inputTopics"]),
        operators=operators,
        sink_topic=sink.get("topic"),
        sink_table=sink.get("table"),
    )


# -- operators over envelope streams ------------------------------------------


@dataclass
class _Ctx:
    pipeline: str
    registry: Any = None


def _numeric(e: Envelope, op: str) -> float | int:
    if not e.data_type.numeric:
        raise IncompatibleDataType(f"{op} needs numeric values, {e.topic} carries {e.data_type.value}")
    return e.value


def _meta_value(e: Envelope, name: str, ctx: _Ctx) -> Any:
    if e.meta is not None:
        return e.meta.get(name)
    if ctx.registry is None:
        raise InvalidValue("filter", "metadata predicates on reference envelopes need a registry")
    return ctx.registry.get_metadata(e.meta_key).to_json().get(name)


def op_filter(stream: list[Envelope], params: dict, ctx: _Ctx) -> list[Envelope]:
    cmp = COMPARISONS[params["op"]]
    operand = params["operand"]
    fld = params["field"]
    out = []
    for e in stream:
        value = e.value if fld == "value" else _meta_value(e, fld[len("meta."):], ctx)
        try:
            keep = cmp(value, operand)
        except TypeError:
            raise IncompatibleDataType(
                f"cannot compare {type(value).__name__} with {type(operand).__name__}") from None
        if keep:
            out.append(e)
    return out


def op_map_scale(stream: list[Envelope], params: dict, ctx: _Ctx) -> list[Envelope]:
    factor = params["factor"]
    offset = params.get("offset", 0)
    new_unit = params.get("newUnit")
    out = []
    derived_keys: dict[str, str] = {}
    for e in stream:
        value = float(_numeric(e, "mapScale")) * factor + offset
        meta, meta_key = e.meta, e.meta_key
        if meta is not None:
            meta = dict(meta, dataType=DataType.FLOAT64.value)
            if new_unit is not None:
                meta["engineeringUnit"] = new_unit
        elif new_unit is not None:
            meta_key = derived_keys.get(e.meta_key) or _derive_metadata(e.meta_key, new_unit, ctx)
            derived_keys[e.meta_key] = meta_key
        out.append(replace(e, value=value, data_type=DataType.FLOAT64, meta=meta, meta_key=meta_key))
    return out


def _derive_metadata(key: str, new_unit: str, ctx: _Ctx) -> str:
    """Reference-mode unit change: a new metadata entry next to the original."""
    if ctx.registry is None:
        raise InvalidValue("mapScale.newUnit", "reference envelopes need a registry to change units")
    original = ctx.registry.get_metadata(key)
    derived = f"{key}@{ctx.pipeline}"
    ctx.registry.put_metadata(replace(original, metadata_key=derived,
                                      engineering_unit=new_unit, data_type=DataType.FLOAT64))
    return derived


def _aggregate(fn: str, values: list, data_type: DataType) -> tuple[Any, DataType]:
    if fn == "count":
        return len(values), DataType.INT64
    if fn == "mean":
        return math.fsum(values) / len(values), DataType.FLOAT64
    if fn == "sum":
        if data_type is DataType.INT64:
            return sum(values), DataType.INT64
        return math.fsum(values), DataType.FLOAT64
    pick = min if fn == "min" else max
    return pick(values), data_type


def op_aggregate(stream: list[Envelope], params: dict, ctx: _Ctx) -> list[Envelope]:
    """Tumbling windows ``[k*w, (k+1)*w)`` over source timestamps."""
    fn, width = params["fn"], params["windowMillis"]
    windows: dict[int, list[Envelope]] = {}
    for e in stream:
        if fn != "count":
            _numeric(e, f"aggregate({fn})")
        windows.setdefault(e.source_ts // width, []).append(e)
    out = []
    for k in sorted(windows):
        members = windows[k]
        types = {m.data_type for m in members}
        data_type = DataType.FLOAT64 if len(types) > 1 else members[0].data_type
        value, out_type = _aggregate(fn, [m.value for m in members], data_type)
        if out_type is DataType.FLOAT64:
            value = float(value)
        first = members[0]
        meta = first.meta
        if meta is not None and "dataType" in meta:
            meta = dict(meta, dataType=out_type.value)
        out.append(replace(
            first, value=value, data_type=out_type, source_ts=k * width,
            ingest_ts=max(m.ingest_ts for m in members), meta=meta,
        ))
    return out


def _series_of(stream: list[Envelope], op: str) -> Series:
    series = [(e.source_ts, float(_numeric(e, op))) for e in stream]
    _check_series(series)
    return series


def _resampled(stream: list[Envelope], times: list[int], method: str) -> list[Envelope]:
    series = _series_of(stream, "resample")
    values = sample_at(series, times, method)
    ts = [t for t, _ in series]
    out = []
    for t, v in zip(times, values):
        i = bisect.bisect_right(ts, t) - 1
        left = stream[i]
        ingest = left.ingest_ts
        if ts[i] != t and method == "linear":
            ingest = max(ingest, stream[i + 1].ingest_ts)
        meta = left.meta
        if meta is not None and "dataType" in meta:
            meta = dict(meta, dataType=DataType.FLOAT64.value)
        out.append(replace(left, value=v, data_type=DataType.FLOAT64, source_ts=t,
                           ingest_ts=ingest, meta=meta))
    return out


def op_resample(stream: list[Envelope], params: dict, ctx: _Ctx) -> list[Envelope]:
    if not stream:
        return []
    series = _series_of(stream, "resample")
    times = grid_points(series[0][0], series[-1][0], params["gridMillis"])
    return _resampled(stream, times, params["method"])


def op_align(streams: dict[str, list[Envelope]], params: dict) -> dict[str, list[Envelope]]:
    grid, method = params["gridMillis"], params["method"]
    series = {topic: _series_of(stream, "align") for topic, stream in streams.items()}
    rows = align_series(series, grid, method)
    times = [t for t, _ in rows]
    return {topic: _resampled(stream, times, method) for topic, stream in streams.items()}


_STREAM_OPS = {
    "filter": op_filter,
    "mapScale": op_map_scale,
    "aggregate": op_aggregate,
    "resample": op_resample,
}


def apply_operators(streams: dict[str, list[Envelope]], operators: Sequence[OperatorSpec],
                    pipeline: str = "", registry=None) -> dict[str, list[Envelope]]:
    """Apply the operator chain to every input stream (align across all of them)."""
    ctx = _Ctx(pipeline, registry)
    streams = {k: list(v) for k, v in streams.items()}
    for op in operators:
        if op.kind == "align":
            streams = op_align(streams, op.params)
        else:
            fn = _STREAM_OPS[op.kind]
            streams = {k: fn(v, op.params, ctx) for k, v in streams.items()}
    return streams


# -- pipeline runner --------------------------------------------------------


@dataclass
class TransformReport:
    records_in: int = 0
    records_out: int = 0
    sink_offsets: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"in": self.records_in, "out": self.records_out}


def read_envelopes(buffer: Buffer, topic: str, from_offset: int | None = None,
                   to_offset: int | None = None) -> list[Envelope]:
    log_ = buffer.topic(topic)
    start = log_.earliest_offset if from_offset is None else from_offset
    stop = log_.next_offset if to_offset is None else min(to_offset, log_.next_offset)
    if stop <= start:
        return []
    return [decode_envelope(r.payload) for r in log_.read(start, stop - start)]


def merge_streams(streams: Mapping[str, list[Envelope]], order: Sequence[str]) -> list[tuple[str, Envelope]]:
    """Interleave per-topic outputs by source time; ties keep topic order."""
    keyed = []
    for rank, topic in enumerate(order):
        for pos, e in enumerate(streams.get(topic, ())):
            keyed.append(((e.source_ts, rank, pos), topic, e))
    keyed.sort(key=lambda item: item[0])
    return [(topic, e) for _, topic, e in keyed]


def run_pipeline(spec: PipelineSpec, buffer: Buffer, serving=None,
                 from_offsets: Mapping[str, int] | None = None,
                 to_offsets: Mapping[str, int] | None = None,
                 registry=None) -> TransformReport:
    from_offsets = from_offsets or {}
    to_offsets = to_offsets or {}
    for topic in spec.input_topics:
        buffer.topic(topic)
    streams = {
        topic: read_envelopes(buffer, topic, from_offsets.get(topic), to_offsets.get(topic))
        for topic in spec.input_topics
    }
    report = TransformReport(records_in=sum(len(s) for s in streams.values()))
    if spec.operators and spec.operators[0].kind == "align" and not all(streams.values()):
        raise EmptyIntersection("align over an empty input range")
    results = apply_operators(streams, spec.operators, spec.name, registry)
    merged = merge_streams(results, spec.input_topics)

    if spec.sink_topic is not None:
        if merged:
            buffer.ensure_topic(spec.sink_topic)
        for _, e in merged:
            out = replace(e, topic=spec.sink_topic, pipeline=spec.name)
            report.sink_offsets.append(
                buffer.append_with(spec.sink_topic, out.ingest_ts, encoder_for(out)))
    else:
        if serving is None:
            raise InvalidValue("sink", "table sink needs a serving store")
        for source_topic, e in merged:
            serving.upsert(spec.sink_table, e.source_ts, float(_numeric(e, "table sink")), source_topic)
    report.records_out = len(merged)
    return report
