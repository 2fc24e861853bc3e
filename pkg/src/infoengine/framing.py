"""Length-prefixed framing: 4-byte big-endian payload length, then payload."""

from __future__ import annotations

import socket
import struct

from infoengine.errors import CorruptPayload

HEADER = struct.Struct(">I")
MAX_FRAME = 64 * 1024 * 1024


def encode_frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise ValueError(f"frame of {len(payload)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(payload)) + payload


class FrameDecoder:
    """Incremental decoder; ``feed`` returns every frame completed so far."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[bytes]:
        self._buf.extend(data)
        frames = []
        while len(self._buf) >= HEADER.size:
            (length,) = HEADER.unpack_from(self._buf)
            if length > MAX_FRAME:
                raise CorruptPayload(f"frame length {length} exceeds {MAX_FRAME}")
            end = HEADER.size + length
            if len(self._buf) < end:
                break
            frames.append(bytes(self._buf[HEADER.size:end]))
            del self._buf[:end]
        return frames

    @property
    def pending(self) -> int:
        return len(self._buf)


def split_frames(data: bytes) -> list[bytes]:
    """Decode a complete byte string of frames; trailing garbage is an error."""
    dec = FrameDecoder()
    frames = dec.feed(data)
    if dec.pending:
        raise CorruptPayload(f"{dec.pending} trailing bytes after last frame")
    return frames


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> bytes | None:
    """Read one frame; ``None`` on clean EOF before a header."""
    first = sock.recv(HEADER.size)
    if not first:
        return None
    header = first + (_recv_exact(sock, HEADER.size - len(first)) if len(first) < HEADER.size else b"")
    (length,) = HEADER.unpack(header)
    if length > MAX_FRAME:
        raise CorruptPayload(f"frame length {length} exceeds {MAX_FRAME}")
    return _recv_exact(sock, length)


def send_frame(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(encode_frame(payload))
