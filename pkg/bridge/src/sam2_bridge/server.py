"""Frame-protocol server around a promptable segmentation model.

Operations: ``init`` (loads the model and reports the feature geometry),
``set_image`` (returns an image id plus the float32 feature grid),
``prompt`` (single best mask for a point/box), ``amg`` (grid-prompted
exhaustive masks), ``release`` (frees the image's cached state). Every
error is answered as ``{"ok": false, "error": ...}`` with an empty
payload; only unrecoverable stream corruption closes the connection.

Sessions live per connection and hold the decoded image plus its feature
grid; ``release`` drops both, keeping a long-lived server's memory flat.
Model access is serialized with one lock shared across connections.
"""

from __future__ import annotations

import logging
import socket
import sys
import threading
from dataclasses import dataclass, field

import numpy as np

from . import wire
from .models import ModelError, build_model

logger = logging.getLogger("sam2_bridge")


@dataclass
class ServerConfig:
    model: str = "synthetic"
    device: str = "auto"
    points_per_side: int = 64
    patch_grid: int = 16
    embed_dim: int = 32
    feature_layer: str = "image_embed"
    listen: str = "stdio"  # "stdio" | "tcp"
    host: str = "127.0.0.1"
    port: int = 7447


@dataclass
class _Session:
    image: np.ndarray
    features: np.ndarray


class _Connection:
    """One client's protocol state."""

    def __init__(self, server: "BridgeServer"):
        self.server = server
        self.sessions: dict[str, _Session] = {}
        self.counter = 0

    def handle(self, header: dict, payload: bytes) -> tuple[dict, bytes]:
        op = header.get("op")
        try:
            if op == "init":
                return self.server.do_init(header)
            if op == "set_image":
                return self.do_set_image(header, payload)
            if op == "prompt":
                return self.do_prompt(header)
            if op == "amg":
                return self.do_amg(header)
            if op == "release":
                return self.do_release(header)
            return {"ok": False, "error": f"unknown op {op!r}"}, b""
        except (ModelError, ValueError, KeyError, TypeError, IndexError) as exc:
            return {"ok": False, "error": f"{type(exc).__name__}: {exc}"}, b""

    def do_set_image(self, header: dict, payload: bytes) -> tuple[dict, bytes]:
        if not self.server.ready:
            return {"ok": False, "error": "init required before set_image"}, b""
        height = int(header["height"])
        width = int(header["width"])
        channels = int(header.get("channels", 3))
        if header.get("dtype", "u8") != "u8" or channels != 3:
            return {"ok": False, "error": "only u8 HWC RGB images are supported"}, b""
        if height < 1 or width < 1:
            return {"ok": False, "error": "image dimensions must be positive"}, b""
        expected = height * width * channels
        if len(payload) != expected:
            return {"ok": False,
                    "error": f"payload is {len(payload)} bytes, expected {expected}"}, b""
        image = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels).copy()
        with self.server.model_lock:
            features = self.server.model.encode(image)
        features = np.ascontiguousarray(features, dtype="<f4")
        self.counter += 1
        image_id = f"img-{self.counter}"
        self.sessions[image_id] = _Session(image=image, features=features)
        header_out = {
            "ok": True,
            "image_id": image_id,
            "feature_shape": [int(x) for x in features.shape],
            "feature_dtype": "f32",
        }
        return header_out, features.tobytes()

    def _session(self, header: dict) -> _Session | None:
        return self.sessions.get(header.get("image_id"))

    def do_prompt(self, header: dict) -> tuple[dict, bytes]:
        session = self._session(header)
        if session is None:
            return {"ok": False, "error": "unknown image_id"}, b""
        point = header.get("point")
        box = header.get("box")
        if point is None and box is None:
            return {"ok": False, "error": "prompt needs a point or a box"}, b""
        point_t = (float(point[0]), float(point[1])) if point is not None else None
        box_t = tuple(float(x) for x in box) if box is not None else None
        if point_t is not None:
            u_count, v_count = session.image.shape[:2]
            if not (0 <= round(point_t[0]) < u_count and 0 <= round(point_t[1]) < v_count):
                return {"ok": False, "error": "point outside image"}, b""
        with self.server.model_lock:
            mask, score = self.server.model.predict(session.image, session.features,
                                                    point_t, box_t)
        return ({"ok": True, "score": float(score)},
                np.asarray(mask, dtype=np.uint8).tobytes())

    def do_amg(self, header: dict) -> tuple[dict, bytes]:
        session = self._session(header)
        if session is None:
            return {"ok": False, "error": "unknown image_id"}, b""
        pps = int(header.get("points_per_side", self.server.config.points_per_side))
        if pps < 1:
            return {"ok": False, "error": "points_per_side must be >= 1"}, b""
        with self.server.model_lock:
            results = self.server.model.auto_masks(session.image, session.features, pps)
        payload = b"".join(np.asarray(m, dtype=np.uint8).tobytes() for m, _ in results)
        return {"ok": True, "count": len(results),
                "scores": [float(s) for _, s in results]}, payload

    def do_release(self, header: dict) -> tuple[dict, bytes]:
        if self.sessions.pop(header.get("image_id"), None) is None:
            return {"ok": False, "error": "unknown image_id"}, b""
        return {"ok": True}, b""


class BridgeServer:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.model = build_model(config.model, device=config.device,
                                 patch_grid=config.patch_grid,
                                 embed_dim=config.embed_dim,
                                 feature_layer=config.feature_layer)
        self.model_lock = threading.Lock()
        self.ready = False
        self._geometry: tuple[int, int] | None = None

    def do_init(self, header: dict) -> tuple[dict, bytes]:
        requested = header.get("model")
        if requested and requested != self.config.model:
            logger.warning("client asked for model %r, serving %r",
                           requested, self.config.model)
        if self._geometry is None:
            with self.model_lock:
                if self._geometry is None:
                    self._geometry = self.model.load()
        self.ready = True
        patch_grid, embed_dim = self._geometry
        return {"ok": True, "patch_grid": int(patch_grid),
                "embed_dim": int(embed_dim)}, b""

    def serve_stream(self, reader, writer) -> None:
        conn = _Connection(self)
        while True:
            try:
                frame = wire.recv(reader)
            except wire.BadHeader as exc:
                try:
                    wire.send(writer, {"ok": False, "error": str(exc)})
                except OSError:
                    return
                continue
            except (wire.StreamCorrupt, OSError) as exc:
                try:
                    wire.send(writer, {"ok": False, "error": str(exc)})
                except (OSError, ValueError):
                    pass
                return
            if frame is None:
                return
            header, payload = frame
            resp_header, resp_payload = conn.handle(header, payload)
            try:
                wire.send(writer, resp_header, resp_payload)
            except OSError:
                return

    def serve_stdio(self) -> None:
        self.serve_stream(sys.stdin.buffer, sys.stdout.buffer)

    def serve_tcp(self) -> None:
        listener = socket.create_server((self.config.host, self.config.port))
        host, port = listener.getsockname()[:2]
        print(f"listening on {host}:{port}", file=sys.stderr, flush=True)
        try:
            while True:
                sock, _ = listener.accept()
                thread = threading.Thread(target=self._serve_socket, args=(sock,),
                                          daemon=True)
                thread.start()
        finally:
            listener.close()

    def _serve_socket(self, sock: socket.socket) -> None:
        reader = sock.makefile("rb")
        writer = sock.makefile("wb")
        try:
            self.serve_stream(reader, writer)
        finally:
            for stream in (writer, reader):
                try:
                    stream.close()
                except OSError:
                    pass
            try:
                sock.close()
            except OSError:
                pass


def serve(config: ServerConfig) -> None:
    server = BridgeServer(config)
    if config.listen == "stdio":
        server.serve_stdio()
    else:
        server.serve_tcp()
