"""TCP transport for simulated devices.

Requests and responses are single frames holding UTF-8 JSON::

    {"op": "read", "refs": [<nodeRef>...], "at": <ms>}
    {"op": "browse", "root": <nodeRef>, "depth": <int>}
    {"op": "addressSpace"}
    {"op": "readCount"}

Responses mirror the op (``{"op": "read", "samples": [...]}``) or carry
``{"error": {"type": ..., "message": ...}}``.
"""

from __future__ import annotations

import base64
import json
import socket
import socketserver
import threading
from typing import Any, Sequence
from urllib.parse import urlparse

from infoengine import errors
from infoengine.errors import SourceUnavailable
from infoengine.framing import recv_frame, send_frame
from infoengine.nodes import AddressSpace, AddressSpaceNode, DataType, NodeRef
from infoengine.source import Sample, SimDevice, Status


def _value_to_json(value: Any, data_type: DataType) -> Any:
    if data_type is DataType.BYTES:
        return base64.b64encode(value).decode("ascii")
    return value


def _value_from_json(value: Any, data_type: DataType) -> Any:
    if data_type is DataType.BYTES:
        return base64.b64decode(value)
    if data_type is DataType.FLOAT64:
        return float(value)
    return value


def handle_request(device: SimDevice, request: dict) -> dict:
    op = request.get("op")
    try:
        if op == "read":
            refs = [NodeRef.from_json(r) for r in request["refs"]]
            samples = device.read(refs, int(request["at"]))
            return {"op": "read", "samples": [
                {"nodeRef": s.node_ref.to_json(), "dataType": s.data_type.value,
                 "value": _value_to_json(s.value, s.data_type),
                 "sourceTs": s.source_timestamp, "status": s.status.value}
                for s in samples
            ]}
        if op == "browse":
            node = device.browse(NodeRef.from_json(request["root"]), int(request["depth"]))
            return {"op": "browse", "node": node.to_json()}
        if op == "addressSpace":
            return {"op": "addressSpace", "name": device.name,
                    "node": device.address_space().root.to_json()}
        if op == "readCount":
            return {"op": "readCount", "count": device.read_count}
        return {"error": {"type": "BadRequest", "message": f"unknown op {op!r}"}}
    except errors.EngineError as exc:
        return {"error": {"type": type(exc).__name__, "message": str(exc)}}
    except (KeyError, TypeError, ValueError) as exc:
        return {"error": {"type": "BadRequest", "message": str(exc)}}


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        while True:
            try:
                frame = recv_frame(self.request)
            except (ConnectionError, OSError):
                return
            if frame is None:
                return
            try:
                request = json.loads(frame)
                response = handle_request(self.server.device, request)
            except json.JSONDecodeError as exc:
                response = {"error": {"type": "BadRequest", "message": str(exc)}}
            send_frame(self.request, json.dumps(response).encode())


class SimDeviceServer(socketserver.ThreadingTCPServer):
    """Serves one :class:`SimDevice` over framed TCP; use as a context manager."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, device: SimDevice, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.device = device
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def start(self) -> "SimDeviceServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


_ERRORS = {
    "UnresolvableNode": lambda m: errors.UnresolvableNode(m),
    "NotAVariable": errors.NotAVariable,
    "InvalidValue": lambda m: errors.InvalidValue("request", m),
}


class TcpSourceClient:
    """Source adapter talking to a :class:`SimDeviceServer`.

    One connection per call keeps the client safe for concurrent use.
    """

    def __init__(self, name: str, host: str, port: int, timeout: float = 5.0):
        self.name = name
        self.host = host
        self.port = port
        self.timeout = timeout
        self._space: AddressSpace | None = None

    @classmethod
    def from_uri(cls, name: str, uri: str) -> "TcpSourceClient":
        parsed = urlparse(uri)
        return cls(name, parsed.hostname or "127.0.0.1", parsed.port or 4840)

    def _call(self, request: dict) -> dict:
        try:
            with socket.create_connection((self.host, self.port), timeout=self.timeout) as sock:
                send_frame(sock, json.dumps(request).encode())
                frame = recv_frame(sock)
        except OSError as exc:
            raise SourceUnavailable(f"{self.name}: {exc}") from exc
        if frame is None:
            raise SourceUnavailable(f"{self.name}: connection closed")
        response = json.loads(frame)
        if "error" in response:
            err = response["error"]
            factory = _ERRORS.get(err["type"])
            if factory is None:
                raise SourceUnavailable(f"{self.name}: {err['type']}: {err['message']}")
            raise factory(err["message"])
        return response

    def address_space(self) -> AddressSpace:
        if self._space is None:
            self._space = AddressSpace.from_json(self._call({"op": "addressSpace"})["node"])
        return self._space

    def browse(self, root: NodeRef, depth: int) -> AddressSpaceNode:
        resp = self._call({"op": "browse", "root": root.to_json(), "depth": depth})
        return AddressSpaceNode.from_json(resp["node"])

    def read(self, refs: Sequence[NodeRef], at: int) -> list[Sample]:
        resp = self._call({"op": "read", "refs": [r.to_json() for r in refs], "at": at})
        out = []
        for s in resp["samples"]:
            dt = DataType(s["dataType"])
            out.append(Sample(NodeRef.from_json(s["nodeRef"]), _value_from_json(s["value"], dt),
                              dt, s["sourceTs"], Status(s["status"])))
        return out

    @property
    def read_count(self) -> int:
        return self._call({"op": "readCount"})["count"]
