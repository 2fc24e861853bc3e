"""Source adapters and deterministic simulated devices.

A source adapter exposes the read/browse surface of a device. The only
implementations here are simulated devices (in process, or behind the TCP
transport in :mod:`infoengine.transport`); a real OPC UA client would be
another class satisfying :class:`SourceAdapter`.

Simulated signal values are pure functions of ``(seed, generator, at)``, so
any read can be replayed and checked against a closed form.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Protocol, Sequence

from infoengine.errors import InvalidValue, MissingField, NotAVariable, UnknownDevice
from infoengine.nodes import AddressSpace, AddressSpaceNode, DataType, NodeRef, truncate


class Status(str, Enum):
    GOOD = "good"
    BAD = "bad"


@dataclass(frozen=True)
class Sample:
    node_ref: NodeRef
    value: Any
    data_type: DataType
    source_timestamp: int
    status: Status = Status.GOOD


class SourceAdapter(Protocol):
    name: str

    def address_space(self) -> AddressSpace: ...

    def browse(self, root: NodeRef, depth: int) -> AddressSpaceNode: ...

    def read(self, refs: Sequence[NodeRef], at: int) -> list[Sample]: ...

    @property
    def read_count(self) -> int: ...


# -- generators -------------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    value: Any

    def __call__(self, t_ms: int) -> Any:
        return self.value


@dataclass(frozen=True)
class Sine:
    amplitude: float
    freq_hz: float
    offset: float = 0.0

    def __post_init__(self):
        if self.freq_hz <= 0:
            raise InvalidValue("freqHz", "must be > 0")

    def __call__(self, t_ms: int) -> float:
        t = t_ms / 1000.0
        return self.offset + self.amplitude * math.sin(2 * math.pi * self.freq_hz * t)


@dataclass(frozen=True)
class Ramp:
    slope_per_sec: float

    def __call__(self, t_ms: int) -> float:
        return self.slope_per_sec * (t_ms / 1000.0)


def _gaussian(seed: int, key: str, index: int) -> float:
    digest = hashlib.blake2b(f"{seed}:{key}:{index}".encode(), digest_size=16).digest()
    a, b = struct.unpack(">QQ", digest)
    u1 = (a + 1) / 2.0**64  # (0, 1]
    u2 = b / 2.0**64
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


class RandomWalk:
    """Counter-based walk: step ``i`` is a hash of ``(seed, node, i)``.

    The value at time ``t`` is the sum of the first ``floor(t / step_millis)``
    steps; prefix sums are cached but never change.
    """

    def __init__(self, step_std_dev: float, seed: int, key: str,
                 step_millis: int = 1000, start: float = 0.0):
        if step_millis < 1:
            raise InvalidValue("stepMillis", "must be ≥ 1")
        self.step_std_dev = step_std_dev
        self.seed = seed
        self.key = key
        self.step_millis = step_millis
        self.start = start
        self._prefix = [start]
        self._lock = threading.Lock()

    def __call__(self, t_ms: int) -> float:
        n = max(0, t_ms // self.step_millis)
        with self._lock:
            while len(self._prefix) <= n:
                i = len(self._prefix)
                step = self.step_std_dev * _gaussian(self.seed, self.key, i)
                self._prefix.append(self._prefix[-1] + step)
            return self._prefix[n]


def make_generator(spec: dict, seed: int, key: str):
    kind = spec.get("kind")
    try:
        if kind == "constant":
            return Constant(spec["value"])
        if kind == "sine":
            return Sine(float(spec["amplitude"]), float(spec["freqHz"]), float(spec.get("offset", 0.0)))
        if kind == "ramp":
            return Ramp(float(spec["slopePerSec"]))
        if kind == "randomWalk":
            return RandomWalk(float(spec["stepStdDev"]), seed, key,
                              int(spec.get("stepMillis", 1000)), float(spec.get("start", 0.0)))
    except KeyError as exc:
        raise MissingField(f"generator.{exc.args[0]}") from None
    raise InvalidValue("generator.kind", f"unknown generator {kind!r}")


_DEFAULTS = {
    DataType.FLOAT64: 0.0,
    DataType.INT64: 0,
    DataType.BOOLEAN: False,
    DataType.STRING: "",
    DataType.BYTES: b"",
}


def coerce(value: Any, data_type: DataType) -> Any:
    if data_type is DataType.FLOAT64:
        return float(value)
    if data_type is DataType.INT64:
        return int(round(value))
    if data_type is DataType.BOOLEAN:
        return bool(value)
    if data_type is DataType.STRING:
        return str(value)
    if isinstance(value, str):
        return value.encode()
    return bytes(value)


# -- simulated device -------------------------------------------------------


class SimDevice:
    """In-process simulated device server."""

    def __init__(self, name: str, address_space: AddressSpace, seed: int = 0,
                 signals: dict[str, Any] | None = None):
        self.name = name
        self.seed = seed
        self._space = address_space
        self._signals = dict(signals or {})
        self._reads = 0
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, config: dict) -> "SimDevice":
        for key in ("name", "addressSpace"):
            if key not in config:
                raise MissingField(key)
        space = AddressSpace.from_json(config["addressSpace"])
        seed = int(config.get("seed", 0))
        signals = {}
        for i, sig in enumerate(config.get("signals", [])):
            ref = NodeRef.from_json(sig["nodeRef"], f"signals[{i}].nodeRef")
            node = space.resolve(ref)
            signals[node.node_ref.canonical] = make_generator(
                sig["generator"], seed, node.node_ref.canonical)
        return cls(config["name"], space, seed, signals)

    @classmethod
    def from_file(cls, path: str | Path) -> "SimDevice":
        return cls.from_config(json.loads(Path(path).read_text()))

    def address_space(self) -> AddressSpace:
        return self._space

    def browse(self, root: NodeRef, depth: int) -> AddressSpaceNode:
        return truncate(self._space.resolve(root), depth)

    def read(self, refs: Sequence[NodeRef], at: int) -> list[Sample]:
        with self._lock:
            self._reads += 1
        out = []
        for ref in refs:
            node = self._space.resolve(ref)
            if not node.is_variable:
                raise NotAVariable(ref.canonical)
            gen = self._signals.get(node.node_ref.canonical)
            raw = gen(at) if gen is not None else _DEFAULTS[node.data_type]
            out.append(Sample(ref, coerce(raw, node.data_type), node.data_type, at))
        return out

    @property
    def read_count(self) -> int:
        return self._reads


class SourcePool:
    """Adapters by device name."""

    def __init__(self, adapters: Sequence[SourceAdapter] = ()):
        self._adapters: dict[str, SourceAdapter] = {a.name: a for a in adapters}

    def add(self, adapter: SourceAdapter) -> None:
        self._adapters[adapter.name] = adapter

    def get(self, name: str) -> SourceAdapter:
        try:
            return self._adapters[name]
        except KeyError:
            raise UnknownDevice(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._adapters

    def __iter__(self):
        return iter(self._adapters.values())

    def read_count(self, name: str) -> int:
        return self.get(name).read_count
