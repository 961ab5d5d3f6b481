"""Client tests against the wire-protocol stub server subprocess."""

import sys
from pathlib import Path

import numpy as np
import psutil
import pytest

from lfseg.backend import ExternalBackend, Prompt, Transport, TransportError

SERVER = Path(__file__).parent / "stub_server.py"


def spawn_transport() -> Transport:
    return Transport(command=(sys.executable, str(SERVER)))


@pytest.fixture()
def backend():
    b = ExternalBackend(spawn_transport(), pool_size=2)
    yield b
    b.close()


def image(h=16, w=16, fill=7):
    return np.full((h, w, 3), fill, dtype=np.uint8)


class TestTransportParse:
    def test_spawn(self):
        t = Transport.parse("spawn:python -m something --stdio")
        assert t.command == ("python", "-m", "something", "--stdio")

    def test_tcp(self):
        assert Transport.parse("tcp:127.0.0.1:7447").address == ("127.0.0.1", 7447)

    @pytest.mark.parametrize("bad", ["tcp:nope", "spawn:", "udp:1:2", "tcp:host:notaport"])
    def test_bad_specs(self, bad):
        with pytest.raises(TransportError):
            Transport.parse(bad)


class TestExternalBackend:
    def test_set_image_features(self, backend):
        session = backend.set_image(image())
        assert session.features.grid.shape == (4, 4, 8)
        np.testing.assert_array_equal(session.features.grid, 1.0)

    def test_prompt_masks_roundtrip(self, backend):
        session = backend.set_image(image())
        result = backend.prompt(session, Prompt(point=(8.0, 8.0)))
        assert result.score == 0.75
        expected = np.zeros((16, 16), dtype=bool)
        expected[6:11, 6:11] = True
        np.testing.assert_array_equal(result.mask.bits, expected)

    def test_amg(self, backend):
        session = backend.set_image(image())
        results = backend.auto_generate(session, 8)
        assert [r.score for r in results] == [0.9, 0.8]
        assert results[0].mask.bits[:8].all() and not results[0].mask.bits[8:].any()

    def test_release_and_double_release(self, backend):
        session = backend.set_image(image())
        backend.release(session)
        backend.release(session)

    def test_prompt_after_release_fails_locally(self, backend):
        from lfseg.backend import InvalidSessionError
        session = backend.set_image(image())
        backend.release(session)
        with pytest.raises(InvalidSessionError):
            backend.prompt(session, Prompt(point=(1.0, 1.0)))

    def test_server_error_is_transport_error(self, backend):
        session = backend.set_image(image())
        # bypass the client-side guard to exercise the server error path
        with pytest.raises(TransportError, match="unknown image_id"):
            session.conn.request({"op": "prompt", "image_id": "nope",
                                  "point": [1.0, 1.0], "box": None})

    def test_sessions_pinned_across_pool(self, backend):
        sessions = [backend.set_image(image(fill=i)) for i in range(5)]
        for s in sessions:
            result = backend.prompt(s, Prompt(point=(3.0, 3.0)))
            assert result.mask.bits.any()
        for s in sessions:
            backend.release(s)

    def test_spawn_failure_raises_transport_error(self):
        with pytest.raises(TransportError, match="cannot reach"):
            ExternalBackend(Transport(command=("/nonexistent/binary",))).set_image(image())


def test_soak_set_release_bounded_memory():
    """1000 set/release cycles must not grow the server's RSS."""
    backend = ExternalBackend(spawn_transport(), pool_size=1)
    try:
        img = image(32, 32)
        for _ in range(50):  # warmup
            backend.release(backend.set_image(img))
        conn = backend._pool[0]
        proc = psutil.Process(conn.proc.pid)
        rss_before = proc.memory_info().rss
        for _ in range(1000):
            backend.release(backend.set_image(img))
        rss_after = proc.memory_info().rss
        assert rss_after <= rss_before * 1.10, (rss_before, rss_after)
    finally:
        backend.close()
