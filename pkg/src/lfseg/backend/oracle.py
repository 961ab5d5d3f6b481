"""Ground-truth-driven segmenter for exact desk-scale verification.

The oracle is constructed from a light field with per-view labels and
per-view feature images (synthetic scenes provide both). ``set_image``
identifies the submitted image by content hash, so callers use the same
interface as against a real model. Prompts resolve through the labels:

- a point prompt returns exactly the label mask under the (rounded) point,
  score 1.0, or an empty mask with score 0.0 on unlabeled (label 0) pixels;
- with both point and box, the point decides;
- a box-only prompt returns the label with the largest overlap with the
  box (ties to the smaller label id);
- automatic generation probes a uniform point grid and deduplicates by
  label id, in grid scan order.
"""

from __future__ import annotations

import hashlib
from typing import Callable

import numpy as np

from ..core import LightField, ViewMask, round_half_away
from ..synthgen import SyntheticScene, downsample_features
from .base import (
    BackendSession,
    FeatureMap,
    PromptError,
    Prompt,
    SegmenterBackend,
    SegmentResult,
    check_point_bounds,
    check_session,
    grid_points,
)


def _image_key(image: np.ndarray) -> bytes:
    return hashlib.sha1(np.ascontiguousarray(image, dtype=np.uint8).tobytes()).digest()


class OracleSession(BackendSession):
    pass


class OracleBackend(SegmenterBackend):
    def __init__(self, lf: LightField, labels: np.ndarray,
                 features: Callable[[int, int], np.ndarray], patch_grid: int):
        self._labels = np.asarray(labels)
        self._features = features
        self._patch_grid = int(patch_grid)
        self._dims = lf.dims
        self._view_of: dict[bytes, tuple[int, int]] = {}
        for s in range(lf.dims[0]):
            for t in range(lf.dims[1]):
                self._view_of.setdefault(_image_key(lf.views[s, t]), (s, t))
        self._feature_cache: dict[tuple[int, int], FeatureMap] = {}

    @classmethod
    def from_scene(cls, scene: SyntheticScene, patch_grid: int | None = None) -> "OracleBackend":
        return cls(scene.lf, scene.gt.labels, scene.feature_image,
                   patch_grid or scene.spec.patch_grid)

    def set_image(self, image: np.ndarray) -> BackendSession:
        image = np.asarray(image)
        if image.ndim != 3 or 0 in image.shape:
            raise PromptError(f"image must be (U, V, 3) and non-empty, got {image.shape}")
        view = self._view_of.get(_image_key(image))
        if view is None:
            raise PromptError("image does not match any subview of the oracle's light field")
        if view not in self._feature_cache:
            self._feature_cache[view] = FeatureMap(
                downsample_features(self._features(*view), self._patch_grid))
        return OracleSession(image_ref=view, dims=image.shape[:2],
                             features=self._feature_cache[view])

    def _view_labels(self, session: BackendSession) -> np.ndarray:
        s, t = session.image_ref
        return self._labels[s, t]

    def _label_result(self, session: BackendSession, label: int) -> SegmentResult:
        labels = self._view_labels(session)
        if label <= 0:
            return SegmentResult(ViewMask.empty(session.dims), 0.0)
        return SegmentResult(ViewMask(labels == label), 1.0)

    def prompt(self, session: BackendSession, prompt: Prompt) -> SegmentResult:
        check_session(session)
        labels = self._view_labels(session)
        if prompt.point is not None:
            check_point_bounds(prompt.point, session.dims)
            u = int(round_half_away(prompt.point[0]))
            v = int(round_half_away(prompt.point[1]))
            return self._label_result(session, int(labels[u, v]))
        u0, v0, u1, v1 = prompt.box
        u0 = max(int(round_half_away(u0)), 0)
        v0 = max(int(round_half_away(v0)), 0)
        u1 = min(int(round_half_away(u1)), session.dims[0] - 1)
        v1 = min(int(round_half_away(v1)), session.dims[1] - 1)
        if u0 > u1 or v0 > v1:
            raise PromptError(f"box {prompt.box} outside image of size {session.dims}")
        window = labels[u0:u1 + 1, v0:v1 + 1]
        counts = np.bincount(window.ravel())
        counts[0] = 0  # unlabeled pixels never win
        if counts.max(initial=0) == 0:
            return SegmentResult(ViewMask.empty(session.dims), 0.0)
        return self._label_result(session, int(counts.argmax()))

    def auto_generate(self, session: BackendSession, points_per_side: int) -> list[SegmentResult]:
        check_session(session)
        if points_per_side < 1:
            raise PromptError("points_per_side must be >= 1")
        labels = self._view_labels(session)
        pts = round_half_away(grid_points(points_per_side, session.dims))
        pts[:, 0] = np.clip(pts[:, 0], 0, session.dims[0] - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0, session.dims[1] - 1)
        results = []
        seen: set[int] = set()
        for u, v in pts:
            label = int(labels[u, v])
            if label > 0 and label not in seen:
                seen.add(label)
                results.append(self._label_result(session, label))
        return results

    def release(self, session: BackendSession) -> None:
        session.released = True
