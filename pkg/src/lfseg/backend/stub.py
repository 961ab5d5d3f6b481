"""Canned backend for protocol and degradation tests."""

from __future__ import annotations

import numpy as np

from ..core import ViewMask
from .base import (
    BackendSession,
    FeatureMap,
    Prompt,
    PromptError,
    SegmenterBackend,
    SegmentResult,
    check_point_bounds,
    check_session,
)

STUB_PATCH_GRID = 4
STUB_EMBED_DIM = 8


class StubBackend(SegmenterBackend):
    """Fixed responses: all-ones 4x4x8 features, empty masks, no auto masks."""

    def set_image(self, image: np.ndarray) -> BackendSession:
        image = np.asarray(image)
        if image.ndim != 3 or 0 in image.shape:
            raise PromptError(f"image must be (U, V, 3) and non-empty, got {image.shape}")
        grid = np.ones((STUB_PATCH_GRID, STUB_PATCH_GRID, STUB_EMBED_DIM), dtype=np.float32)
        return BackendSession(image_ref=None, dims=image.shape[:2], features=FeatureMap(grid))

    def prompt(self, session: BackendSession, prompt: Prompt) -> SegmentResult:
        check_session(session)
        if prompt.point is not None:
            check_point_bounds(prompt.point, session.dims)
        return SegmentResult(ViewMask.empty(session.dims), 0.0)

    def auto_generate(self, session: BackendSession, points_per_side: int) -> list[SegmentResult]:
        check_session(session)
        return []

    def release(self, session: BackendSession) -> None:
        session.released = True
