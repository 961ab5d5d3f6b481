from __future__ import annotations

import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

from sam2_bridge import wire

REPO_ROOT = Path(__file__).resolve().parents[2]
GOLDEN_PATH = REPO_ROOT / "tests" / "data" / "golden_frames.json"

SERVER_ARGS = [sys.executable, "-m", "sam2_bridge", "--model", "synthetic",
               "--patch-grid", "4", "--embed-dim", "8"]


class StdioClient:
    """Minimal test client over a spawned stdio server."""

    def __init__(self, extra_args: list[str] | None = None):
        self.proc = subprocess.Popen(SERVER_ARGS + (extra_args or []),
                                     stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def request(self, header: dict, payload: bytes = b"") -> tuple[dict, bytes]:
        wire.send(self.proc.stdin, header, payload)
        frame = wire.recv(self.proc.stdout)
        if frame is None:
            raise RuntimeError("server closed the stream")
        return frame

    def send_raw(self, data: bytes) -> None:
        self.proc.stdin.write(data)
        self.proc.stdin.flush()

    def recv(self):
        return wire.recv(self.proc.stdout)

    def close(self) -> None:
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


@pytest.fixture()
def client():
    c = StdioClient()
    yield c
    c.close()


@pytest.fixture(scope="module")
def tcp_server():
    """A TCP server subprocess; yields (host, port, process)."""
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    proc = subprocess.Popen(SERVER_ARGS + ["--tcp", f"127.0.0.1:{port}"],
                            stderr=subprocess.PIPE)
    line = proc.stderr.readline()
    assert b"listening" in line, line
    yield "127.0.0.1", port, proc
    proc.terminate()
    try:
        proc.wait(timeout=5)
    except subprocess.TimeoutExpired:
        proc.kill()
        proc.wait()


def tcp_connect(host: str, port: int, attempts: int = 20) -> socket.socket:
    for _ in range(attempts):
        try:
            return socket.create_connection((host, port), timeout=5)
        except OSError:
            time.sleep(0.05)
    raise RuntimeError(f"cannot connect to {host}:{port}")
