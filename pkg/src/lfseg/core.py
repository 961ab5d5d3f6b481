"""Core data types, coordinate conventions, and view-to-view point projection.

Conventions used across the package:

- A light field ``L[s, t, u, v, c]`` has view-grid axes ``(s, t)`` and
  spatial axes ``(u, v)``; ``s`` pairs with ``u`` (image rows) and ``t``
  with ``v`` (image columns).
- Pixel coordinates are ``(row=u, col=v)``, origin at the top-left pixel.
- Disparity is measured in pixels per unit subview step and is anchored
  to the middle subview: a scene point at ``(u, v)`` in the middle view
  ``(s_m, t_m)`` appears at ``(u + d*(s_m - i), v + d*(t_m - j))`` in
  view ``(i, j)``.
- All types are treated as immutable after construction; they are safe to
  read from any number of concurrent workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class LfsegError(Exception):
    """Base class for errors raised by this package."""


class ViewIndex(NamedTuple):
    """Position of one subview in the view grid."""

    s: int
    t: int


class Stage(enum.IntEnum):
    """Provenance of a per-view mask."""

    ABSENT = 0
    COARSE = 1
    OCCLUDED = 2
    REFINED = 3
    FALLBACK = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def from_label(cls, label: str) -> "Stage":
        return cls[label.upper()]


def middle_view(s_count: int, t_count: int) -> ViewIndex:
    """Default reference view: the center of the view grid."""
    return ViewIndex(s_count // 2, t_count // 2)


def round_half_away(x):
    """Round to the nearest integer with halves away from zero.

    ``np.round`` rounds halves to even, which would make projected pixel
    positions depend on parity; this package rounds 0.5 -> 1, -0.5 -> -1
    everywhere a real coordinate becomes a pixel index.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.trunc(x + np.copysign(0.5, x)).astype(np.int64)
    if out.ndim == 0:
        return int(out)
    return out


def project_point(
    p: tuple[float, float],
    d: float,
    target: tuple[int, int],
    middle: tuple[int, int],
) -> tuple[float, float]:
    """Project a middle-view point into ``target`` under disparity ``d``.

    Returns real-valued coordinates; rounding and bounds handling are the
    caller's responsibility.
    """
    u, v = p
    return (u + d * (middle[0] - target[0]), v + d * (middle[1] - target[1]))


def backproject_point(
    p: tuple[float, float],
    d: float,
    view: tuple[int, int],
    middle: tuple[int, int],
) -> tuple[float, float]:
    """Map a point observed in ``view`` back to middle-view coordinates.

    Exact algebraic inverse of :func:`project_point` when the same ``d``
    is used for both directions.
    """
    u, v = p
    return (u - d * (middle[0] - view[0]), v - d * (middle[1] - view[1]))


def snake_order(s_count: int, t_count: int) -> list[ViewIndex]:
    """Boustrophedon traversal of the view grid.

    Rows are visited in ascending ``s``; within even rows ``t`` ascends,
    within odd rows it descends, so consecutive entries always differ by
    exactly one grid step.
    """
    if s_count < 1 or t_count < 1:
        raise LfsegError("snake_order requires a non-empty view grid")
    order: list[ViewIndex] = []
    for s in range(s_count):
        ts = range(t_count) if s % 2 == 0 else range(t_count - 1, -1, -1)
        order.extend(ViewIndex(s, t) for t in ts)
    return order


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; IoU(empty, empty) = 0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 0.0
    return int(np.count_nonzero(a & b)) / union


@dataclass(eq=False)
class ViewMask:
    """Binary mask over one subview."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.dtype != np.bool_:
            bits = bits != 0
        if bits.ndim != 2:
            raise LfsegError(f"mask must be 2-D, got shape {bits.shape}")
        self.bits = bits

    @classmethod
    def empty(cls, dims: tuple[int, int]) -> "ViewMask":
        return cls(np.zeros(dims, dtype=bool))

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def is_empty(self) -> bool:
        return not self.bits.any()

    def coords(self) -> np.ndarray:
        """Set pixels as an (N, 2) int array of (u, v), in scan order."""
        return np.argwhere(self.bits)


@dataclass(eq=False)
class LightFieldMask:
    """One segment's masks over every subview, with per-view provenance."""

    segment_id: int
    masks: np.ndarray  # (S, T, U, V) bool
    stage: np.ndarray  # (S, T) uint8, values from Stage
    prompt_log: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.masks = np.asarray(self.masks, dtype=bool)
        self.stage = np.asarray(self.stage, dtype=np.uint8)
        if self.masks.ndim != 4:
            raise LfsegError("masks must have shape (S, T, U, V)")
        if self.stage.shape != self.masks.shape[:2]:
            raise LfsegError("stage grid must match the view grid")

    @classmethod
    def empty(cls, segment_id: int, dims: tuple[int, int, int, int]) -> "LightFieldMask":
        s, t, u, v = dims
        return cls(segment_id, np.zeros((s, t, u, v), dtype=bool), np.zeros((s, t), dtype=np.uint8))

    def view(self, s: int, t: int) -> np.ndarray:
        return self.masks[s, t]

    def stage_at(self, s: int, t: int) -> Stage:
        return Stage(int(self.stage[s, t]))

    def set_view(self, s: int, t: int, bits: np.ndarray, stage: Stage) -> None:
        bits = np.asarray(bits, dtype=bool)
        has_pixels = bool(bits.any())
        if has_pixels != (stage != Stage.ABSENT):
            raise LfsegError("stage is ABSENT exactly when the view mask is empty")
        self.masks[s, t] = bits
        self.stage[s, t] = int(stage)

    def stage_labels(self) -> list[list[str]]:
        return [[Stage(int(x)).label for x in row] for row in self.stage]


@dataclass(eq=False)
class GroundTruth:
    """Per-view integer labels and/or real disparity maps.

    Label value 0 is the unlabeled background; segments are labels >= 1.
    """

    labels: np.ndarray | None = None  # (S, T, U, V) integer, >= 0
    disparity: np.ndarray | None = None  # (S, T, U, V) float32

    def __post_init__(self) -> None:
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.ndim != 4:
                raise LfsegError("labels must have shape (S, T, U, V)")
            if self.labels.min(initial=0) < 0:
                raise LfsegError("labels must be non-negative")
        if self.disparity is not None:
            self.disparity = np.asarray(self.disparity, dtype=np.float32)
            if self.disparity.ndim != 4:
                raise LfsegError("disparity must have shape (S, T, U, V)")


@dataclass(eq=False)
class LightField:
    """A 4-D light field: an (S, T) grid of (U, V, 3) 8-bit RGB subviews."""

    views: np.ndarray
    middle: ViewIndex
    gt: GroundTruth | None = None

    def __post_init__(self) -> None:
        self.views = np.asarray(self.views)
        if self.views.ndim != 5 or self.views.shape[-1] != 3:
            raise LfsegError(f"views must have shape (S, T, U, V, 3), got {self.views.shape}")
        if self.views.dtype != np.uint8:
            raise LfsegError("views must be 8-bit RGB")
        s_count, t_count = self.views.shape[:2]
        self.middle = ViewIndex(*self.middle)
        if not (0 <= self.middle.s < s_count and 0 <= self.middle.t < t_count):
            raise LfsegError(f"middle view {tuple(self.middle)} outside the {s_count}x{t_count} grid")

    @classmethod
    def from_views(cls, views: np.ndarray, middle: ViewIndex | None = None,
                   gt: GroundTruth | None = None) -> "LightField":
        views = np.asarray(views)
        if middle is None:
            middle = middle_view(views.shape[0], views.shape[1])
        return cls(views, middle, gt)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        s, t, u, v = self.views.shape[:4]
        return s, t, u, v

    def subview(self, s: int, t: int) -> np.ndarray:
        return self.views[s, t]

    def middle_image(self) -> np.ndarray:
        return self.views[self.middle.s, self.middle.t]


@dataclass(eq=False)
class DisparityMap:
    """Middle-view disparity (pixels per unit subview step) plus coherence."""

    values: np.ndarray  # (U, V) float32
    coherence: np.ndarray  # (U, V) float32 in [0, 1]
    view: ViewIndex

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float32)
        self.coherence = np.asarray(self.coherence, dtype=np.float32)
        if self.values.ndim != 2 or self.coherence.shape != self.values.shape:
            raise LfsegError("disparity and coherence must be matching 2-D maps")
        if not np.all(np.isfinite(self.values)):
            raise LfsegError("disparity values must be finite")
        if self.coherence.min(initial=0.0) < 0.0 or self.coherence.max(initial=0.0) > 1.0:
            raise LfsegError("coherence must lie in [0, 1]")
        self.view = ViewIndex(*self.view)

    @classmethod
    def constant(cls, dims: tuple[int, int], value: float, view: ViewIndex) -> "DisparityMap":
        u, v = dims
        return cls(np.full((u, v), value, dtype=np.float32), np.ones((u, v), dtype=np.float32), view)
