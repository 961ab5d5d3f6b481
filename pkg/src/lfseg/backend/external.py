"""Wire-protocol client for an external segmentation server.

The server is either a spawned subprocess speaking the frame protocol on
its stdio, or a TCP endpoint. A small connection pool (default 4)
provides parallelism; each connection carries at most one in-flight
request, and a session stays pinned to the connection that created it.

Transport specs (``--server`` / ``LFSEG_SERVER``)::

    spawn:python -m sam2_bridge --stdio
    tcp:127.0.0.1:7447
"""

from __future__ import annotations

import shlex
import socket
import subprocess
import sys
import threading
from dataclasses import dataclass

import numpy as np

from ..core import ViewMask
from .base import (
    BackendSession,
    FeatureMap,
    Prompt,
    PromptError,
    SegmenterBackend,
    SegmentResult,
    TransportError,
    check_point_bounds,
    check_session,
)
from . import wire


@dataclass(frozen=True)
class Transport:
    command: tuple[str, ...] | None = None
    address: tuple[str, int] | None = None

    @classmethod
    def parse(cls, spec: str) -> "Transport":
        if spec.startswith("spawn:"):
            argv = tuple(shlex.split(spec[len("spawn:"):]))
            if not argv:
                raise TransportError(f"empty spawn command in {spec!r}")
            return cls(command=argv)
        if spec.startswith("tcp:"):
            rest = spec[len("tcp:"):]
            host, _, port = rest.rpartition(":")
            if not host or not port.isdigit():
                raise TransportError(f"bad tcp address {spec!r}, want tcp:host:port")
            return cls(address=(host, int(port)))
        raise TransportError(f"unknown transport {spec!r}; use spawn:... or tcp:host:port")


class _Connection:
    """One framed channel to the server, with a request lock."""

    def __init__(self, transport: Transport, init_header: dict):
        self.lock = threading.Lock()
        self.proc: subprocess.Popen | None = None
        self.sock: socket.socket | None = None
        try:
            if transport.command is not None:
                self.proc = subprocess.Popen(
                    transport.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    stderr=sys.stderr.buffer if hasattr(sys.stderr, "buffer") else None)
                self.reader = self.proc.stdout
                self.writer = self.proc.stdin
            else:
                self.sock = socket.create_connection(transport.address, timeout=30.0)
                self.sock.settimeout(None)
                self.reader = self.sock.makefile("rb")
                self.writer = self.sock.makefile("wb")
        except OSError as exc:
            raise TransportError(f"cannot reach segmentation server: {exc}") from exc
        header, _ = self.request(init_header)
        self.patch_grid = int(header["patch_grid"])
        self.embed_dim = int(header["embed_dim"])

    def request(self, header: dict, payload: bytes = b"") -> tuple[dict, bytes]:
        with self.lock:
            try:
                wire.write_frame(self.writer, header, payload)
                frame = wire.read_frame(self.reader)
            except (OSError, ValueError, wire.FrameError) as exc:
                raise TransportError(f"server connection failed: {exc}") from exc
        if frame is None:
            raise TransportError("server closed the connection")
        resp_header, resp_payload = frame
        if not resp_header.get("ok", False):
            raise TransportError(f"server error: {resp_header.get('error', 'unknown')}")
        return resp_header, resp_payload

    def close(self) -> None:
        for stream in (getattr(self, "writer", None), getattr(self, "reader", None)):
            try:
                if stream is not None:
                    stream.close()
            except OSError:
                pass
        if self.sock is not None:
            try:
                self.sock.close()
            except OSError:
                pass
        if self.proc is not None:
            try:
                self.proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                self.proc.terminate()
                try:
                    self.proc.wait(timeout=5.0)
                except subprocess.TimeoutExpired:
                    self.proc.kill()
                    self.proc.wait()


class ExternalSession(BackendSession):
    conn: _Connection = None
    remote_id: str = ""


class ExternalBackend(SegmenterBackend):
    def __init__(self, transport: Transport | str, pool_size: int = 4,
                 model: str = "hiera-small", device: str = "auto"):
        if isinstance(transport, str):
            transport = Transport.parse(transport)
        self._transport = transport
        self._init_header = {"op": "init", "model": model, "device": device}
        self._pool_size = max(1, int(pool_size))
        self._pool: list[_Connection] = []
        self._next = 0
        self._pool_lock = threading.Lock()

    def _pick_connection(self) -> _Connection:
        with self._pool_lock:
            if len(self._pool) < self._pool_size:
                conn = _Connection(self._transport, self._init_header)
                self._pool.append(conn)
                return conn
            conn = self._pool[self._next % len(self._pool)]
            self._next += 1
            return conn

    def set_image(self, image: np.ndarray) -> BackendSession:
        image = np.ascontiguousarray(image, dtype=np.uint8)
        if image.ndim != 3 or image.shape[2] != 3 or 0 in image.shape:
            raise PromptError(f"image must be (U, V, 3) and non-empty, got {image.shape}")
        conn = self._pick_connection()
        header, payload = conn.request({
            "op": "set_image",
            "height": int(image.shape[0]),
            "width": int(image.shape[1]),
            "channels": 3,
            "dtype": "u8",
        }, image.tobytes())
        shape = tuple(int(x) for x in header["feature_shape"])
        feats = np.frombuffer(payload, dtype="<f4")
        if feats.size != int(np.prod(shape)):
            raise TransportError(
                f"feature payload has {feats.size} floats, header says {shape}")
        session = ExternalSession(image_ref=header["image_id"], dims=image.shape[:2],
                                  features=FeatureMap(feats.reshape(shape).copy()))
        session.conn = conn
        session.remote_id = header["image_id"]
        return session

    def _mask_from_bytes(self, payload: bytes, dims: tuple[int, int]) -> ViewMask:
        expected = dims[0] * dims[1]
        if len(payload) != expected:
            raise TransportError(f"mask payload is {len(payload)} bytes, expected {expected}")
        bits = np.frombuffer(payload, dtype=np.uint8).reshape(dims) != 0
        return ViewMask(bits)

    def prompt(self, session: ExternalSession, prompt: Prompt) -> SegmentResult:
        check_session(session)
        if prompt.point is not None:
            check_point_bounds(prompt.point, session.dims)
        header, payload = session.conn.request({
            "op": "prompt",
            "image_id": session.remote_id,
            "point": [float(prompt.point[0]), float(prompt.point[1])] if prompt.point else None,
            "box": [float(x) for x in prompt.box] if prompt.box else None,
        })
        return SegmentResult(self._mask_from_bytes(payload, session.dims),
                             float(header.get("score", 0.0)))

    def auto_generate(self, session: ExternalSession, points_per_side: int) -> list[SegmentResult]:
        check_session(session)
        header, payload = session.conn.request({
            "op": "amg",
            "image_id": session.remote_id,
            "points_per_side": int(points_per_side),
        })
        count = int(header.get("count", 0))
        scores = [float(x) for x in header.get("scores", [])]
        if len(scores) != count:
            raise TransportError("amg response scores do not match count")
        frame = session.dims[0] * session.dims[1]
        if len(payload) != count * frame:
            raise TransportError(
                f"amg payload is {len(payload)} bytes for {count} masks of {frame}")
        results = []
        for i in range(count):
            mask = self._mask_from_bytes(payload[i * frame:(i + 1) * frame], session.dims)
            results.append(SegmentResult(mask, scores[i]))
        return results

    def release(self, session: ExternalSession) -> None:
        if session.released:
            return
        session.released = True
        session.conn.request({"op": "release", "image_id": session.remote_id})

    def close(self) -> None:
        with self._pool_lock:
            pool, self._pool = self._pool, []
        for conn in pool:
            conn.close()
