"""Promptable 2-D segmentation interface consumed by the pipeline.

Implementations share one contract: ``set_image`` returns a session
carrying the image's patch-feature grid, repeated ``prompt`` calls against
a session never re-encode, identical (image, prompt) pairs yield identical
results, and ``release`` invalidates the session (double release is a
no-op).
"""

from __future__ import annotations

import abc
import itertools
from dataclasses import dataclass, field

import numpy as np

from ..core import LfsegError, ViewMask


class SegmenterError(LfsegError):
    """Base class for backend failures."""


class PromptError(SegmenterError):
    """Invalid input: malformed prompt, bad image, unknown or released session."""


class InvalidSessionError(PromptError):
    pass


class TransportError(SegmenterError):
    """Wire, process, or server-side failure talking to an external backend."""


@dataclass(frozen=True)
class Prompt:
    """A point and/or box prompt, in (u, v) = (row, col) pixel coordinates.

    ``box`` is (u_min, v_min, u_max, v_max) with inclusive bounds. At least
    one of point/box must be present; point bounds are validated against
    the session's image by the backend.
    """

    point: tuple[float, float] | None = None
    box: tuple[float, float, float, float] | None = None
    point_label: bool = True

    def __post_init__(self) -> None:
        if self.point is None and self.box is None:
            raise PromptError("prompt needs a point or a box")
        if self.box is not None:
            u0, v0, u1, v1 = self.box
            if u0 > u1 or v0 > v1:
                raise PromptError(f"box {self.box} is not well-ordered")


@dataclass(eq=False)
class SegmentResult:
    mask: ViewMask
    score: float


@dataclass(eq=False)
class FeatureMap:
    """(P, P, K) patch-embedding grid of one subview."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.float32)
        if self.grid.ndim != 3:
            raise SegmenterError(f"feature grid must be (P, P, K), got {self.grid.shape}")
        if not np.all(np.isfinite(self.grid)):
            raise SegmenterError("feature grid contains non-finite entries")

    @property
    def patch_grid(self) -> int:
        return self.grid.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.grid.shape[2]


_session_counter = itertools.count(1)


@dataclass(eq=False)
class BackendSession:
    """Handle for one encoded image; valid until released."""

    image_ref: object
    dims: tuple[int, int]  # (U, V)
    features: FeatureMap
    released: bool = False
    session_id: int = field(default_factory=lambda: next(_session_counter))


def check_session(session: BackendSession) -> None:
    if session.released:
        raise InvalidSessionError("invalid session: already released")


def check_point_bounds(point: tuple[float, float], dims: tuple[int, int]) -> None:
    u, v = point
    if not (-0.5 <= u < dims[0] - 0.5 + 1.0) or not (-0.5 <= v < dims[1] - 0.5 + 1.0):
        # Anything that rounds inside the image is acceptable.
        raise PromptError(f"point {(u, v)} outside image of size {dims}")
    if round(u) < 0 or round(u) >= dims[0] or round(v) < 0 or round(v) >= dims[1]:
        raise PromptError(f"point {(u, v)} outside image of size {dims}")


def grid_points(points_per_side: int, dims: tuple[int, int]) -> np.ndarray:
    """(N, 2) uniform prompt grid: centers of an n x n tiling of the image."""
    u_count, v_count = dims
    n = int(points_per_side)
    us = (np.arange(n) + 0.5) * (u_count / n) - 0.5
    vs = (np.arange(n) + 0.5) * (v_count / n) - 0.5
    grid = np.stack(np.meshgrid(us, vs, indexing="ij"), axis=-1)
    return grid.reshape(-1, 2)


class SegmenterBackend(abc.ABC):
    """Abstract promptable segmentation service."""

    @abc.abstractmethod
    def set_image(self, image: np.ndarray) -> BackendSession:
        """Encode one (U, V, 3) uint8 image and return its session."""

    @abc.abstractmethod
    def prompt(self, session: BackendSession, prompt: Prompt) -> SegmentResult:
        """Single best mask for the prompt; deterministic per (image, prompt)."""

    @abc.abstractmethod
    def auto_generate(self, session: BackendSession, points_per_side: int) -> list[SegmentResult]:
        """Exhaustive grid-prompted segmentation of the session's image."""

    @abc.abstractmethod
    def release(self, session: BackendSession) -> None:
        """Invalidate the session; releasing twice is a no-op."""

    def close(self) -> None:
        """Tear down any transport resources. Default: nothing to do."""

    def __enter__(self) -> "SegmenterBackend":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
