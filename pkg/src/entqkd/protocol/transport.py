"""Reliable ordered frame transports and transcript files."""

from __future__ import annotations

import queue
import socket
import struct
import time
from pathlib import Path

from ..errors import FrameError
from .frames import HEADER_LEN, TRAILER_LEN, parse_header

TRANSCRIPT_MAGIC = b"QKDTRN1\0"
A_TO_B, B_TO_A = 0, 1

_CLOSED = object()


class QueueTransport:
    """One end of an in-memory duplex channel."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float = 60.0):
        self._in = inbox
        self._out = outbox
        self.timeout = timeout

    @classmethod
    def pair(cls, timeout: float = 60.0):
        a, b = queue.Queue(), queue.Queue()
        return cls(a, b, timeout), cls(b, a, timeout)

    def send(self, data: bytes) -> None:
        self._out.put(bytes(data))

    def recv(self) -> bytes:
        try:
            item = self._in.get(timeout=self.timeout)
        except queue.Empty:
            raise ConnectionError("receive timed out") from None
        if item is _CLOSED:
            self._in.put(_CLOSED)
            raise ConnectionError("peer closed the channel")
        return item

    def close(self) -> None:
        self._out.put(_CLOSED)


class SocketTransport:
    """Frames over a connected stream socket (TCP in deployment)."""

    def __init__(self, sock: socket.socket, timeout: float | None = 60.0):
        self.sock = sock
        self.sock.settimeout(timeout)

    def _read(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except socket.timeout:
                raise ConnectionError("receive timed out") from None
            if not chunk:
                raise ConnectionError("connection closed by peer")
            buf.extend(chunk)
        return bytes(buf)

    def send(self, data: bytes) -> None:
        self.sock.sendall(data)

    def recv(self) -> bytes:
        header = self._read(HEADER_LEN)
        # validated before allocating the payload
        payload_len = parse_header(header)[4]
        return header + self._read(payload_len + TRAILER_LEN)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


def listen(host: str, port: int, timeout: float = 60.0) -> SocketTransport:
    with socket.create_server((host, port), reuse_port=False) as srv:
        srv.settimeout(timeout)
        conn, _ = srv.accept()
    conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketTransport(conn)


def connect(host: str, port: int, retry_s: float = 30.0) -> SocketTransport:
    deadline = time.monotonic() + retry_s
    while True:
        try:
            sock = socket.create_connection((host, port), timeout=5.0)
            break
        except OSError:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.1)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return SocketTransport(sock)


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {addr!r}")
    return host, int(port)


class ReplayTransport:
    """Feeds recorded frames to a peer; captures what it sends."""

    def __init__(self, incoming: list[bytes]):
        self._incoming = list(incoming)
        self.sent: list[bytes] = []

    def send(self, data: bytes) -> None:
        self.sent.append(bytes(data))

    def recv(self) -> bytes:
        if not self._incoming:
            raise ConnectionError("replay exhausted")
        return self._incoming.pop(0)

    def close(self) -> None:
        pass


class Transcript:
    """Ordered record of (direction, frame bytes) as seen by one peer."""

    def __init__(self, records=None):
        self.records: list[tuple[int, bytes]] = list(records or [])

    def add(self, direction: int, data: bytes) -> None:
        self.records.append((direction, bytes(data)))

    def frames(self, direction: int) -> list[bytes]:
        return [d for k, d in self.records if k == direction]

    def to_bytes(self) -> bytes:
        out = bytearray(TRANSCRIPT_MAGIC)
        for direction, data in self.records:
            out += struct.pack("<BI", direction, len(data)) + data
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Transcript":
        if data[:8] != TRANSCRIPT_MAGIC:
            raise FrameError("not a transcript file")
        pos, records = 8, []
        while pos < len(data):
            if pos + 5 > len(data):
                raise FrameError("truncated transcript record")
            direction, n = struct.unpack_from("<BI", data, pos)
            pos += 5
            records.append((direction, bytes(data[pos:pos + n])))
            pos += n
        return cls(records)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Transcript":
        return cls.from_bytes(Path(path).read_bytes())
