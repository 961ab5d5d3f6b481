"""Memory soak: released sessions must actually free their state."""

import numpy as np
import psutil

from conftest import StdioClient


def test_500_set_release_cycles_keep_rss_flat():
    client = StdioClient()
    try:
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        img = np.full((64, 64, 3), 127, dtype=np.uint8)
        header = {"op": "set_image", "height": 64, "width": 64,
                  "channels": 3, "dtype": "u8"}
        payload = img.tobytes()

        def cycle():
            resp, _ = client.request(header, payload)
            assert resp["ok"], resp
            resp, _ = client.request({"op": "release", "image_id": resp["image_id"]})
            assert resp["ok"], resp

        for _ in range(50):  # warmup: allocator pools, import side effects
            cycle()
        proc = psutil.Process(client.proc.pid)
        rss_before = proc.memory_info().rss
        for _ in range(500):
            cycle()
        rss_after = proc.memory_info().rss
        growth = rss_after / rss_before - 1.0
        assert growth < 0.10, f"RSS grew {growth:.1%} ({rss_before} -> {rss_after})"
    finally:
        client.close()


def test_unreleased_sessions_do_hold_memory():
    """Sanity check that the soak test measures something real."""
    client = StdioClient()
    try:
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        img = np.zeros((128, 128, 3), dtype=np.uint8)
        header = {"op": "set_image", "height": 128, "width": 128,
                  "channels": 3, "dtype": "u8"}
        proc = psutil.Process(client.proc.pid)
        rss_before = proc.memory_info().rss
        for _ in range(300):
            resp, _ = client.request(header, img.tobytes())
            assert resp["ok"]
        rss_after = proc.memory_info().rss
        # 300 retained 128x128 RGB images ~= 15 MB
        assert rss_after - rss_before > 10 * 1024 * 1024
    finally:
        client.close()
