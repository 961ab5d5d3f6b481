"""Frame codec for the segmentation server protocol.

A frame is two 4-byte little-endian unsigned lengths (header, payload)
followed by a UTF-8 JSON object header and the raw payload. Outgoing
headers are serialized canonically (compact separators, sorted keys);
incoming headers may be any valid JSON object.

The reader distinguishes recoverable garbage (a length-consistent frame
whose header fails to parse: the stream stays in sync, so the server can
answer an error and continue) from stream corruption (truncation or
absurd lengths: the connection cannot be re-synchronized and must close).
"""

from __future__ import annotations

import json
import struct
from typing import BinaryIO

HEADER_LIMIT = 1 << 20
PAYLOAD_LIMIT = 1 << 30

_PREFIX = struct.Struct("<II")


class StreamCorrupt(Exception):
    """Framing can no longer be trusted; close the connection."""


class BadHeader(Exception):
    """Frame was length-consistent but its header is unusable; recoverable."""


def dump_header(header: dict) -> bytes:
    return json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")


def pack(header: dict, payload: bytes = b"") -> bytes:
    raw = dump_header(header)
    return _PREFIX.pack(len(raw), len(payload)) + raw + payload


def send(stream: BinaryIO, header: dict, payload: bytes = b"") -> None:
    stream.write(pack(header, payload))
    stream.flush()


def _read_exact(stream: BinaryIO, n: int, at_boundary: bool) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            if at_boundary and not buf:
                return None
            raise StreamCorrupt(f"stream ended after {len(buf)} of {n} bytes")
        buf += chunk
    return buf


def recv(stream: BinaryIO) -> tuple[dict, bytes] | None:
    """Read one frame; None on clean EOF.

    Raises BadHeader for recoverable garbage and StreamCorrupt when the
    stream state is unrecoverable.
    """
    prefix = _read_exact(stream, _PREFIX.size, at_boundary=True)
    if prefix is None:
        return None
    header_len, payload_len = _PREFIX.unpack(prefix)
    if header_len > HEADER_LIMIT or payload_len > PAYLOAD_LIMIT:
        raise StreamCorrupt(
            f"declared lengths {header_len}/{payload_len} exceed limits")
    raw = _read_exact(stream, header_len, at_boundary=False) if header_len else b""
    payload = _read_exact(stream, payload_len, at_boundary=False) if payload_len else b""
    try:
        header = json.loads(raw.decode("utf-8")) if raw else {}
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise BadHeader("header must be a JSON object")
    return header, payload
