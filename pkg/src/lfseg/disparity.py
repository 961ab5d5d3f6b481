"""Middle-view disparity from epipolar plane image orientation.

An EPI mixes one view axis with one spatial axis; a scene point at
disparity ``d`` traces a line of slope ``du/ds = -d`` through it. The
local line orientation is recovered from the 2x2 structure tensor of the
EPI: Gaussian-derivative gradients at scale ``sigma_grad``, outer products
smoothed at ``sigma_tensor``, and the constant-intensity direction taken
as the eigenvector of the smaller eigenvalue. Coherence measures how
one-dimensional the local structure is; textureless regions approach 0.

Estimation anchors to the middle view: horizontal EPIs come from the
middle row of views (one per image row ``u``), vertical EPIs from the
middle column (one per image column ``v``). Per pixel, the direction with
higher coherence wins; pixels below ``coherence_min`` in both directions
are filled from their nearest confident neighbor.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import DisparityMap, LfsegError, LightField, ViewIndex


class DisparityEstimationError(LfsegError):
    pass


@dataclass(frozen=True)
class DisparityParams:
    sigma_grad: float = 0.8
    sigma_tensor: float = 1.6
    coherence_min: float = 0.05
    disparity_sign: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class EpiSlice:
    """One epipolar plane image: axis 0 is the view axis, axis 1 spatial.

    ``orientation`` records which pairing produced it: "horizontal" for
    (t, v) slices at fixed u, "vertical" for (s, u) slices at fixed v.
    """

    samples: np.ndarray
    orientation: str

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise DisparityEstimationError("EPI must be 2-D")
        if self.orientation not in ("horizontal", "vertical"):
            raise DisparityEstimationError(f"unknown EPI orientation {self.orientation!r}")


def luma(views: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of uint8 RGB, scaled to [0, 1]."""
    views = np.asarray(views, dtype=np.float64)
    return (0.299 * views[..., 0] + 0.587 * views[..., 1] + 0.114 * views[..., 2]) / 255.0


def horizontal_epi(gray: np.ndarray, middle: ViewIndex, u: int) -> EpiSlice:
    """(T, V) slice through the middle row of views at image row ``u``."""
    return EpiSlice(gray[middle.s, :, u, :], "horizontal")


def vertical_epi(gray: np.ndarray, middle: ViewIndex, v: int) -> EpiSlice:
    """(S, U) slice through the middle column of views at image column ``v``."""
    return EpiSlice(gray[:, middle.t, :, v], "vertical")


def epi_orientation(epi: EpiSlice, sigma_grad: float, sigma_tensor: float
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (slope, coherence) of an EPI.

    Slope is the spatial displacement per view step of the local
    constant-intensity direction; disparity follows as ``-slope`` (times
    the dataset's disparity sign). Coherence ((l1-l2)/(l1+l2))^2 is 0
    where the tensor trace vanishes.
    """
    if sigma_grad <= 0 or sigma_tensor <= 0:
        raise DisparityEstimationError("filter scales must be positive")
    samples = epi.samples
    g_view = gaussian_filter(samples, sigma_grad, order=(1, 0))
    g_spat = gaussian_filter(samples, sigma_grad, order=(0, 1))
    j_uu = gaussian_filter(g_spat * g_spat, sigma_tensor)
    j_us = gaussian_filter(g_spat * g_view, sigma_tensor)
    j_ss = gaussian_filter(g_view * g_view, sigma_tensor)

    trace = j_uu + j_ss
    # Dominant-gradient angle from the u-axis; the smaller eigenvalue's
    # eigenvector is perpendicular, giving slope du/ds = -tan(phi).
    phi = 0.5 * np.arctan2(2.0 * j_us, j_uu - j_ss)
    slope = -np.tan(phi)
    spread = np.sqrt((j_uu - j_ss) ** 2 + 4.0 * j_us ** 2)
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(trace < 1e-12, 0.0, (spread / np.where(trace < 1e-12, 1.0, trace)) ** 2)
    return slope, np.clip(coherence, 0.0, 1.0)


def _fill_nearest(values: np.ndarray, valid: np.ndarray, default: float = 0.0) -> np.ndarray:
    """Propagate values from the valid set outward (BFS, 4-neighborhood).

    Ties at equal distance resolve by propagation order, which is scan
    order of the valid seeds; with no valid pixels at all, fill with
    ``default``.
    """
    filled = values.copy()
    if not valid.any():
        filled[:] = default
        return filled
    if valid.all():
        return filled
    u_count, v_count = values.shape
    known = valid.copy()
    queue = deque((int(u), int(v)) for u, v in np.argwhere(valid))
    while queue:
        u, v = queue.popleft()
        for du, dv in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nu, nv = u + du, v + dv
            if 0 <= nu < u_count and 0 <= nv < v_count and not known[nu, nv]:
                known[nu, nv] = True
                filled[nu, nv] = filled[u, v]
                queue.append((nu, nv))
    return filled


def estimate_disparity(lf: LightField, params: DisparityParams | None = None) -> DisparityMap:
    """Structure-tensor disparity of the middle view.

    Requires at least a 3x3 view grid. Within a filter-support margin of
    the image border the affected direction's estimate is discarded
    (mirrored boundary samples produce spurious orientations there); such
    pixels fall back to the other direction or to neighbor fill.
    """
    params = params or DisparityParams()
    s_count, t_count, u_count, v_count = lf.dims
    if s_count < 3 or t_count < 3:
        raise DisparityEstimationError(
            f"disparity estimation needs at least 3x3 views, got {s_count}x{t_count}")
    gray = luma(lf.views)
    mid = lf.middle

    d_h = np.zeros((u_count, v_count))
    coh_h = np.zeros((u_count, v_count))
    for u in range(u_count):
        slope, coh = epi_orientation(horizontal_epi(gray, mid, u),
                                     params.sigma_grad, params.sigma_tensor)
        d_h[u] = -slope[mid.t] * params.disparity_sign
        coh_h[u] = coh[mid.t]

    d_v = np.zeros((u_count, v_count))
    coh_v = np.zeros((u_count, v_count))
    for v in range(v_count):
        slope, coh = epi_orientation(vertical_epi(gray, mid, v),
                                     params.sigma_grad, params.sigma_tensor)
        d_v[:, v] = -slope[mid.s] * params.disparity_sign
        coh_v[:, v] = coh[mid.s]

    margin = int(np.ceil(2.0 * (params.sigma_grad + params.sigma_tensor)))
    if margin > 0:
        m_v = min(margin, v_count // 2)
        m_u = min(margin, u_count // 2)
        if m_v:
            coh_h[:, :m_v] = 0.0
            coh_h[:, v_count - m_v:] = 0.0
        if m_u:
            coh_v[:m_u, :] = 0.0
            coh_v[u_count - m_u:, :] = 0.0

    take_h = coh_h >= coh_v
    values = np.where(take_h, d_h, d_v)
    coherence = np.where(take_h, coh_h, coh_v)
    valid = coherence >= params.coherence_min
    values = _fill_nearest(values, valid)
    coherence = np.where(valid, coherence, 0.0)
    values = np.where(np.isfinite(values), values, 0.0)
    return DisparityMap(values.astype(np.float32), coherence.astype(np.float32), mid)
