"""Protocol conformance: golden frames, operation flows, error behavior."""

import io
import json

import numpy as np
import pytest

from sam2_bridge import wire
from conftest import GOLDEN_PATH

GOLDEN = json.loads(GOLDEN_PATH.read_text())


class TestGoldenFrames:
    @pytest.mark.parametrize("case", GOLDEN["cases"], ids=lambda c: c["name"])
    def test_codec_reproduces_fixture_bytes(self, case):
        payload = bytes.fromhex(case["payload_hex"])
        assert wire.pack(case["header"], payload).hex() == case["frame_hex"]

    @pytest.mark.parametrize("case", GOLDEN["cases"], ids=lambda c: c["name"])
    def test_codec_parses_fixture_bytes(self, case):
        header, payload = wire.recv(io.BytesIO(bytes.fromhex(case["frame_hex"])))
        assert header == case["header"]
        assert payload.hex() == case["payload_hex"]

    def test_server_answers_every_request_fixture(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        for case in GOLDEN["cases"]:
            if case["direction"] != "request":
                continue
            header, _ = client.request(case["header"],
                                       bytes.fromhex(case["payload_hex"]))
            assert "ok" in header


def rgb(h=24, w=24):
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[:, :] = (40, 90, 200)
    img[6:18, 6:18] = (230, 60, 20)  # a distinct block to segment
    return img


def set_image(client, img):
    header, payload = client.request({
        "op": "set_image", "height": img.shape[0], "width": img.shape[1],
        "channels": 3, "dtype": "u8"}, img.tobytes())
    assert header["ok"], header
    return header, payload


class TestOperationFlow:
    def test_init_reports_feature_geometry(self, client):
        header, payload = client.request({"op": "init", "model": "synthetic",
                                          "device": "cpu"})
        assert header == {"ok": True, "patch_grid": 4, "embed_dim": 8}
        assert payload == b""

    def test_set_image_features_match_declared_shape(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        header, payload = set_image(client, rgb())
        shape = tuple(header["feature_shape"])
        assert shape == (4, 4, 8)
        feats = np.frombuffer(payload, dtype="<f4")
        assert feats.size == np.prod(shape)
        assert np.isfinite(feats).all()

    def test_set_image_before_init_is_an_error(self, client):
        img = rgb()
        header, _ = client.request({
            "op": "set_image", "height": 24, "width": 24,
            "channels": 3, "dtype": "u8"}, img.tobytes())
        assert header["ok"] is False
        assert "init" in header["error"]

    def test_prompt_returns_mask_of_image_size(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        header, _ = set_image(client, rgb())
        image_id = header["image_id"]
        resp, payload = client.request({"op": "prompt", "image_id": image_id,
                                        "point": [12.0, 12.0], "box": None})
        assert resp["ok"] and 0.0 <= resp["score"] <= 1.0
        mask = np.frombuffer(payload, dtype=np.uint8).reshape(24, 24)
        assert mask[12, 12] == 1
        assert mask[0, 0] == 0  # background block is a different color
        assert set(np.unique(mask)) <= {0, 1}

    def test_prompt_determinism(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        header, _ = set_image(client, rgb())
        req = {"op": "prompt", "image_id": header["image_id"],
               "point": [12.0, 12.0], "box": None}
        a = client.request(req)
        b = client.request(req)
        assert a == b

    def test_amg_counts_and_payload_sizes_agree(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        header, _ = set_image(client, rgb())
        resp, payload = client.request({"op": "amg", "image_id": header["image_id"],
                                        "points_per_side": 4})
        assert resp["ok"]
        assert resp["count"] == len(resp["scores"])
        assert len(payload) == resp["count"] * 24 * 24
        assert resp["count"] >= 2  # the block and the background

    def test_release_then_prompt_is_an_error(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        header, _ = set_image(client, rgb())
        image_id = header["image_id"]
        resp, _ = client.request({"op": "release", "image_id": image_id})
        assert resp == {"ok": True}
        resp, _ = client.request({"op": "prompt", "image_id": image_id,
                                  "point": [1.0, 1.0], "box": None})
        assert resp["ok"] is False and "unknown image_id" in resp["error"]

    def test_unknown_op_is_answered_not_fatal(self, client):
        resp, _ = client.request({"op": "frobnicate"})
        assert resp["ok"] is False
        resp, _ = client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        assert resp["ok"] is True

    def test_point_outside_image_is_an_error(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        header, _ = set_image(client, rgb())
        resp, _ = client.request({"op": "prompt", "image_id": header["image_id"],
                                  "point": [500.0, 500.0], "box": None})
        assert resp["ok"] is False

    def test_payload_size_mismatch_is_an_error(self, client):
        client.request({"op": "init", "model": "synthetic", "device": "cpu"})
        resp, _ = client.request({"op": "set_image", "height": 24, "width": 24,
                                  "channels": 3, "dtype": "u8"}, b"short")
        assert resp["ok"] is False and "expected" in resp["error"]
