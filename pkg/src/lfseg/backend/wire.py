"""Length-prefixed binary framing for the segmentation server protocol.

Every message is::

    4 bytes  little-endian unsigned header length H
    4 bytes  little-endian unsigned payload length P
    H bytes  UTF-8 JSON header (an object)
    P bytes  raw payload

Requests carry an ``op`` field (init / set_image / prompt / amg /
release); responses carry ``ok`` plus op-specific fields. Error responses
are ``{"ok": false, "error": "..."}`` with an empty payload. Headers are
serialized canonically (compact separators, sorted keys) so identical
requests are byte-identical; decoders accept any valid JSON object.
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

from .base import TransportError

HEADER_MAX = 1 << 20  # 1 MiB of JSON is already pathological
PAYLOAD_MAX = 1 << 30

_LENGTHS = struct.Struct("<II")


class FrameError(TransportError):
    """Malformed frame on the wire."""


def encode_header(header: dict) -> bytes:
    return json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")


def encode_frame(header: dict, payload: bytes = b"") -> bytes:
    raw = encode_header(header)
    return _LENGTHS.pack(len(raw), len(payload)) + raw + payload


def read_exact(stream: BinaryIO, n: int) -> bytes:
    """Read exactly n bytes; b"" signals a clean EOF at a frame boundary."""
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            if remaining == n:
                return b""
            raise FrameError(f"stream ended mid-frame ({n - remaining}/{n} bytes)")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(stream: BinaryIO) -> tuple[dict, bytes] | None:
    """Read one frame; None on clean EOF. Raises FrameError on garbage."""
    prefix = read_exact(stream, _LENGTHS.size)
    if prefix == b"":
        return None
    header_len, payload_len = _LENGTHS.unpack(prefix)
    if header_len > HEADER_MAX:
        raise FrameError(f"header length {header_len} exceeds {HEADER_MAX}")
    if payload_len > PAYLOAD_MAX:
        raise FrameError(f"payload length {payload_len} exceeds {PAYLOAD_MAX}")
    raw = read_exact(stream, header_len) if header_len else b""
    if header_len and len(raw) != header_len:
        raise FrameError("stream ended mid-header")
    try:
        header = json.loads(raw.decode("utf-8")) if raw else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise FrameError("header must be a JSON object")
    payload = read_exact(stream, payload_len) if payload_len else b""
    if payload_len and len(payload) != payload_len:
        raise FrameError("stream ended mid-payload")
    return header, payload


def write_frame(stream: BinaryIO, header: dict, payload: bytes = b"") -> None:
    stream.write(encode_frame(header, payload))
    stream.flush()
