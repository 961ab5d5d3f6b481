"""Per-segment light field segmentation.

For each source mask found in the middle subview, the pipeline:

1. projects the mask into every other view with the middle-view disparity
   (coarse masks, occlusion-unaware);
2. filters each coarse mask by cosine similarity between its pixels'
   upsampled patch features and the source mask's mean feature, dropping
   likely-occluded pixels and weighting survivors by similarity;
3. prompts the segmentation backend in that view with the weighted
   centroid and bounding box of the surviving pixels;
4. keeps the refined mask when it overlaps the coarse one (IoU at least
   ``t_iou``), otherwise falls back to the coarse mask.

Both filtering and refinement can be toggled off independently; with both
off the output is pure disparity propagation. Per-view work items are
independent and run on a worker pool; outputs are written into
pre-allocated per-(segment, view) slots, so results do not depend on
scheduling order or worker count.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    DisparityMap,
    LfsegError,
    LightField,
    LightFieldMask,
    Stage,
    ViewMask,
    mask_iou,
    round_half_away,
)
from .backend.base import (
    BackendSession,
    FeatureMap,
    Prompt,
    SegmenterBackend,
    TransportError,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    t_sim: float = 0.7
    t_iou: float = 0.1
    points_per_side: int = 64
    enable_refinement: bool = True
    enable_occlusion: bool = True
    min_mask_pixels: int = 4
    disparity_sign: int = 1

    def __post_init__(self) -> None:
        if not (0.0 <= self.t_sim <= 1.0 and 0.0 <= self.t_iou <= 1.0):
            raise LfsegError("t_sim and t_iou must lie in [0, 1]")
        if self.min_mask_pixels < 1:
            raise LfsegError("min_mask_pixels must be >= 1")
        if self.points_per_side < 1:
            raise LfsegError("points_per_side must be >= 1")
        if self.disparity_sign not in (1, -1):
            raise LfsegError("disparity_sign must be +1 or -1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class MaskFeature:
    """Mean feature vector over a mask's pixels."""

    vector: np.ndarray
    support: int

    def __post_init__(self) -> None:
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.support < 1:
            raise LfsegError("mask feature needs at least one supporting pixel")


class WeightedMask:
    """A view mask whose set pixels carry similarity weights in [-1, 1].

    ``weights`` is a full (U, V) array meaningful only on set pixels; when
    the mask was produced from per-pixel similarities it is materialized
    lazily from the sparse form, which is what the hot path consumes.
    """

    def __init__(self, mask: ViewMask, weights: np.ndarray | None = None,
                 coords: np.ndarray | None = None,
                 coord_weights: np.ndarray | None = None):
        self.mask = mask
        self._weights = None
        if weights is not None:
            self._weights = np.asarray(weights, dtype=np.float64)
            if self._weights.shape != mask.bits.shape:
                raise LfsegError("weights grid must match the mask")
        elif coord_weights is None:
            raise LfsegError("weighted mask needs a weights grid or sparse weights")
        self.coords = coords
        self._coord_weights = coord_weights

    @classmethod
    def uniform(cls, mask: ViewMask) -> "WeightedMask":
        return cls(mask, np.ones(mask.bits.shape))

    @property
    def weights(self) -> np.ndarray:
        if self._weights is None:
            full = np.zeros(self.mask.bits.shape)
            full[self.coords[:, 0], self.coords[:, 1]] = self._coord_weights
            self._weights = full
        return self._weights

    @property
    def pixel_count(self) -> int:
        if self.coords is not None:
            return int(self.coords.shape[0])
        return self.mask.pixel_count

    def set_coords(self) -> np.ndarray:
        if self.coords is None:
            self.coords = self.mask.coords()
        return self.coords

    def pixel_weights(self) -> np.ndarray:
        """Weights of the set pixels, in scan order."""
        if self._coord_weights is None:
            coords = self.set_coords()
            self._coord_weights = self.weights[coords[:, 0], coords[:, 1]]
        return self._coord_weights


@dataclass
class TimingRecord:
    """Wall time split by stage, in milliseconds.

    ``source_ms`` covers automatic mask generation, ``sessions_ms`` image
    encoding, ``propagate_ms`` the shared per-segment projection prep, and
    ``views_ms`` the per-view projection, occlusion filtering, and
    refinement work.
    """

    source_ms: float = 0.0
    sessions_ms: float = 0.0
    propagate_ms: float = 0.0
    views_ms: float = 0.0
    total_ms: float = 0.0
    num_masks: int = 0
    num_views: int = 0

    @property
    def per_mask_per_subview_ms(self) -> float | None:
        if self.num_masks == 0 or self.num_views == 0:
            return None
        return self.total_ms / (self.num_masks * self.num_views)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_mask_per_subview_ms"] = self.per_mask_per_subview_ms
        return d


def segment_source(backend: SegmenterBackend, lf: LightField, cfg: PipelineConfig,
                   session: BackendSession | None = None) -> list[tuple[int, ViewMask]]:
    """Automatic mask generation on the middle subview.

    Masks below ``min_mask_pixels`` are dropped; ids are assigned in
    descending area order starting from 1.
    """
    own_session = session is None
    if session is None:
        session = backend.set_image(lf.middle_image())
    try:
        results = backend.auto_generate(session, cfg.points_per_side)
    finally:
        if own_session:
            backend.release(session)
    kept = [(i, r.mask) for i, r in enumerate(results)
            if r.mask.pixel_count >= cfg.min_mask_pixels]
    kept.sort(key=lambda item: (-item[1].pixel_count, item[0]))
    return [(idx + 1, mask) for idx, (_, mask) in enumerate(kept)]


def propagate_mask(source: ViewMask, d: DisparityMap, dims: tuple[int, int],
                   segment_id: int = 0) -> LightFieldMask:
    """Project a middle-view mask into every view of an (S, T) grid.

    Each set pixel moves by its own disparity, rounds half away from zero,
    and out-of-bounds hits are discarded. The middle view keeps the source
    mask bit-exactly.
    """
    s_count, t_count = dims
    u_count, v_count = source.bits.shape
    mid = d.view
    out = LightFieldMask.empty(segment_id, (s_count, t_count, u_count, v_count))
    coords = source.coords()
    if coords.shape[0] == 0:
        return out
    disp = d.values.astype(np.float64)[coords[:, 0], coords[:, 1]]
    for s in range(s_count):
        for t in range(t_count):
            if (s, t) == (mid.s, mid.t):
                out.set_view(s, t, source.bits.copy(), Stage.COARSE)
                continue
            tu = round_half_away(coords[:, 0] + disp * (mid.s - s))
            tv = round_half_away(coords[:, 1] + disp * (mid.t - t))
            inside = (tu >= 0) & (tu < u_count) & (tv >= 0) & (tv < v_count)
            bits = np.zeros((u_count, v_count), dtype=bool)
            bits[tu[inside], tv[inside]] = True
            if bits.any():
                out.set_view(s, t, bits, Stage.COARSE)
    return out


def _project_flat(src_coords: np.ndarray, src_disp: np.ndarray, middle,
                  view: tuple[int, int], dims: tuple[int, int]) -> np.ndarray:
    """Projected in-bounds target pixels as sorted unique flat indices.

    Produces exactly the set-pixel scan order of :func:`propagate_mask`'s
    output for the same view (same rounding, bounds, and duplicate
    collapse), without materializing the bit grid.
    """
    u_count, v_count = dims
    tu = round_half_away(src_coords[:, 0] + src_disp * (middle[0] - view[0]))
    tv = round_half_away(src_coords[:, 1] + src_disp * (middle[1] - view[1]))
    inside = (tu >= 0) & (tu < u_count) & (tv >= 0) & (tv < v_count)
    return np.unique(tu[inside] * v_count + tv[inside])


def features_at(fm: FeatureMap, points: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Bilinear feature samples at (N, 2) pixel coordinates.

    Patch p is centered at pixel (p + 0.5) * U / P - 0.5; samples clamp at
    the grid border. This is the single interpolation kernel behind
    :func:`densify_features`, so sampling a pixel and indexing the dense
    field give bit-identical vectors.
    """
    grid = fm.grid
    p_count = fm.patch_grid
    u_count, v_count = dims
    pts = np.asarray(points, dtype=np.float64)
    x = np.clip((pts[:, 0] + 0.5) * (p_count / u_count) - 0.5, 0.0, p_count - 1.0)
    y = np.clip((pts[:, 1] + 0.5) * (grid.shape[1] / v_count) - 0.5, 0.0, grid.shape[1] - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, p_count - 1)
    y1 = np.minimum(y0 + 1, grid.shape[1] - 1)
    ax = (x - x0).astype(np.float32)[:, None]
    ay = (y - y0).astype(np.float32)[:, None]
    flat = grid.reshape(-1, grid.shape[2])
    stride = grid.shape[1]
    f00 = flat[x0 * stride + y0]
    f01 = flat[x0 * stride + y1]
    f10 = flat[x1 * stride + y0]
    f11 = flat[x1 * stride + y1]
    top = f00 * (1.0 - ay) + f01 * ay
    bottom = f10 * (1.0 - ay) + f11 * ay
    return top * (1.0 - ax) + bottom * ax


def densify_features(fm: FeatureMap, dims: tuple[int, int]) -> np.ndarray:
    """Upsample a patch grid to a dense (U, V, K) field by bilinear interpolation."""
    u_count, v_count = dims
    uu, vv = np.meshgrid(np.arange(u_count), np.arange(v_count), indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    dense = features_at(fm, pts, dims)
    return dense.reshape(u_count, v_count, fm.embed_dim)


def mask_mean_feature(mask: ViewMask, dense: np.ndarray) -> MaskFeature:
    """Mean dense feature over the mask's set pixels."""
    coords = mask.coords()
    if coords.shape[0] == 0:
        raise LfsegError("cannot average features over an empty mask")
    vectors = dense[coords[:, 0], coords[:, 1]]
    return MaskFeature(np.mean(vectors, axis=0, dtype=np.float64), coords.shape[0])


def _mask_mean_feature_sampled(mask: ViewMask, fm: FeatureMap,
                               dims: tuple[int, int]) -> MaskFeature:
    coords = mask.coords()
    if coords.shape[0] == 0:
        raise LfsegError("cannot average features over an empty mask")
    vectors = features_at(fm, coords, dims)
    return MaskFeature(np.mean(vectors, axis=0, dtype=np.float64), coords.shape[0])


def _cosine_to(vectors: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Cosine similarity of each row against ``reference``; 0 for tiny norms."""
    ref = np.asarray(reference, dtype=np.float64)
    ref_norm = float(np.linalg.norm(ref))
    vecs = vectors.astype(np.float64)
    dots = vecs @ ref
    norms = np.sqrt(np.einsum("ij,ij->i", vecs, vecs))
    denom = norms * ref_norm
    safe = (norms >= 1e-12) & (ref_norm >= 1e-12)
    return np.where(safe, dots / np.where(safe, denom, 1.0), 0.0)


def occlude_mask(coarse: ViewMask, dense: np.ndarray, source_feat: MaskFeature,
                 t_sim: float) -> WeightedMask:
    """Drop coarse-mask pixels dissimilar to the source segment's feature.

    Per set pixel, cosine similarity between its dense feature vector and
    the source mean; pixels below ``t_sim`` are cleared and survivors keep
    their similarity as weight. May return an empty mask.
    """
    coords = coarse.coords()
    if coords.shape[0] == 0:
        return WeightedMask(ViewMask.empty(coarse.bits.shape), np.zeros(coarse.bits.shape))
    vectors = dense[coords[:, 0], coords[:, 1]]
    sims = _cosine_to(vectors, source_feat.vector)
    return _keep_similar(coarse, coords, sims, t_sim)


def _grid_corner_indices(fm: FeatureMap, us: np.ndarray, vs: np.ndarray,
                         dims: tuple[int, int]):
    """Bilinear cell corners and weights for pixel coordinate arrays.

    Same geometry as :func:`features_at`: patch centers at
    (p + 0.5) * U / P - 0.5, clamped at the grid border.
    """
    p_rows, p_cols = fm.grid.shape[:2]
    u_count, v_count = dims
    x = np.clip((us + 0.5) * (p_rows / u_count) - 0.5, 0.0, p_rows - 1.0)
    y = np.clip((vs + 0.5) * (p_cols / v_count) - 0.5, 0.0, p_cols - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, p_rows - 1)
    y1 = np.minimum(y0 + 1, p_cols - 1)
    return x0, y0, x1, y1, x - x0, y - y0


def _similarity_tables(fm: FeatureMap) -> dict[str, np.ndarray]:
    """Per-grid Gram tables for fast interpolated-cosine evaluation.

    For every cell base node (x, y), the tables hold the squared norms of
    the four bilinear corner features (with border clamping baked in) and
    their six pairwise dot products. The squared norm of a bilinearly
    interpolated vector is then a 10-term quadratic form in the bilinear
    weights, so per-pixel similarity never touches the K-dimensional
    vectors. Cached on the feature map; tables are deterministic, so a
    benign double computation under concurrency is harmless.
    """
    cached = getattr(fm, "_sim_tables", None)
    if cached is not None:
        return cached
    g = getattr(fm, "_grid64", None)
    if g is None:
        g = fm.grid.astype(np.float64)
        fm._grid64 = g
    right = np.minimum(np.arange(g.shape[1]) + 1, g.shape[1] - 1)
    down = np.minimum(np.arange(g.shape[0]) + 1, g.shape[0] - 1)
    g01 = g[:, right]
    g10 = g[down, :]
    g11 = g[down][:, right]
    tables = {
        "s00": np.einsum("ijk,ijk->ij", g, g).ravel(),
        "s01": np.einsum("ijk,ijk->ij", g01, g01).ravel(),
        "s10": np.einsum("ijk,ijk->ij", g10, g10).ravel(),
        "s11": np.einsum("ijk,ijk->ij", g11, g11).ravel(),
        "p0001": np.einsum("ijk,ijk->ij", g, g01).ravel(),
        "p0010": np.einsum("ijk,ijk->ij", g, g10).ravel(),
        "p0011": np.einsum("ijk,ijk->ij", g, g11).ravel(),
        "p0110": np.einsum("ijk,ijk->ij", g01, g10).ravel(),
        "p0111": np.einsum("ijk,ijk->ij", g01, g11).ravel(),
        "p1011": np.einsum("ijk,ijk->ij", g10, g11).ravel(),
    }
    fm._sim_tables = tables
    return tables


def _sampled_cosine(fm: FeatureMap, us: np.ndarray, vs: np.ndarray,
                    reference: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """Cosine between bilinearly interpolated features and ``reference``.

    Mathematically identical to sampling the dense upscaled field and
    calling :func:`_cosine_to`; evaluated through dot/Gram tables so the
    per-pixel cost is independent of the embedding dimension (results can
    differ from the dense route in the last float ulps).
    """
    ref = np.asarray(reference, dtype=np.float64)
    ref_norm = float(np.linalg.norm(ref))
    x0, y0, x1, y1, ax, ay = _grid_corner_indices(fm, us, vs, dims)
    w00 = (1.0 - ax) * (1.0 - ay)
    w01 = (1.0 - ax) * ay
    w10 = ax * (1.0 - ay)
    w11 = ax * ay
    stride = fm.grid.shape[1]
    i00 = x0 * stride + y0
    grid64 = getattr(fm, "_grid64", None)
    if grid64 is None:
        grid64 = fm.grid.astype(np.float64)
        fm._grid64 = grid64
    dot_grid = (grid64 @ ref).ravel()
    dots = (w00 * dot_grid[i00] + w01 * dot_grid[x0 * stride + y1]
            + w10 * dot_grid[x1 * stride + y0] + w11 * dot_grid[x1 * stride + y1])
    t = _similarity_tables(fm)
    norm2 = (w00 * w00 * t["s00"][i00] + w01 * w01 * t["s01"][i00]
             + w10 * w10 * t["s10"][i00] + w11 * w11 * t["s11"][i00]
             + 2.0 * (w00 * w01 * t["p0001"][i00] + w00 * w10 * t["p0010"][i00]
                      + w00 * w11 * t["p0011"][i00] + w01 * w10 * t["p0110"][i00]
                      + w01 * w11 * t["p0111"][i00] + w10 * w11 * t["p1011"][i00]))
    norm2 = np.maximum(norm2, 0.0)
    safe = (norm2 >= 1e-24) & (ref_norm >= 1e-12)
    denom = np.sqrt(np.where(safe, norm2, 1.0)) * ref_norm
    return np.where(safe, dots / np.where(safe, denom, 1.0), 0.0)


def _occlude_sampled(coarse: ViewMask, fm: FeatureMap, source_feat: MaskFeature,
                     t_sim: float, dims: tuple[int, int]) -> WeightedMask:
    coords = coarse.coords()
    if coords.shape[0] == 0:
        return WeightedMask(ViewMask.empty(coarse.bits.shape), np.zeros(coarse.bits.shape))
    sims = _sampled_cosine(fm, coords[:, 0], coords[:, 1], source_feat.vector, dims)
    return _keep_similar(coarse, coords, sims, t_sim)


def _keep_similar(coarse: ViewMask, coords: np.ndarray, sims: np.ndarray,
                  t_sim: float) -> WeightedMask:
    keep = sims >= t_sim
    kept = coords[keep]
    bits = np.zeros(coarse.bits.shape, dtype=bool)
    bits[kept[:, 0], kept[:, 1]] = True
    return WeightedMask(ViewMask(bits), coords=kept, coord_weights=sims[keep])


def weighted_centroid(wm: WeightedMask) -> tuple[float, float]:
    """Weight-weighted mean position of the set pixels (before any snapping)."""
    coords = wm.set_coords()
    if coords.shape[0] == 0:
        raise LfsegError("cannot take the centroid of an empty mask")
    w = wm.pixel_weights()
    total = float(np.sum(w))
    if total <= 0.0:  # degenerate weights; fall back to the unweighted centroid
        w = np.ones(len(coords))
        total = float(len(coords))
    return (float(np.dot(w, coords[:, 0]) / total),
            float(np.dot(w, coords[:, 1]) / total))


def build_prompt(wm: WeightedMask) -> Prompt:
    """Weighted centroid point plus tight bounding box of a weighted mask.

    If the pixel under the rounded centroid is not set (e.g. a C-shaped
    mask), the point snaps to the nearest set pixel (L2 from the real
    centroid, ties by scan order). Box bounds are inclusive.
    """
    coords = wm.set_coords()
    if coords.shape[0] == 0:
        raise LfsegError("cannot build a prompt from an empty mask")
    cu, cv = weighted_centroid(wm)
    pu, pv = int(round_half_away(cu)), int(round_half_away(cv))
    if not (0 <= pu < wm.mask.bits.shape[0] and 0 <= pv < wm.mask.bits.shape[1]
            and wm.mask.bits[pu, pv]):
        d2 = (coords[:, 0] - cu) ** 2 + (coords[:, 1] - cv) ** 2
        nearest = coords[int(np.argmin(d2))]
        cu, cv = float(nearest[0]), float(nearest[1])
    box = (float(coords[:, 0].min()), float(coords[:, 1].min()),
           float(coords[:, 0].max()), float(coords[:, 1].max()))
    return Prompt(point=(cu, cv), box=box)


def refine_and_select(backend: SegmenterBackend, session: BackendSession,
                      wm: WeightedMask, cfg: PipelineConfig
                      ) -> tuple[ViewMask, Stage, dict]:
    """Prompt the backend and keep the refined mask only if it overlaps.

    IoU(refined, weighted mask) below ``t_iou`` — including an empty
    refined mask — falls back to the weighted mask. Transport failures
    degrade to fallback with a warning instead of aborting the segment.
    """
    prompt = build_prompt(wm)
    record = {
        "point": [prompt.point[0], prompt.point[1]],
        "box": list(prompt.box),
    }
    try:
        result = backend.prompt(session, prompt)
    except TransportError as exc:
        logger.warning("backend prompt failed, keeping coarse mask: %s", exc)
        record.update({"outcome": Stage.FALLBACK.label, "error": str(exc)})
        return wm.mask, Stage.FALLBACK, record
    iou = mask_iou(result.mask.bits, wm.mask.bits)
    record["iou"] = iou
    record["score"] = float(result.score)
    if iou >= cfg.t_iou and not result.mask.is_empty:
        record["outcome"] = Stage.REFINED.label
        return result.mask, Stage.REFINED, record
    record["outcome"] = Stage.FALLBACK.label
    return wm.mask, Stage.FALLBACK, record


def segment_lightfield(backend: SegmenterBackend, lf: LightField, d: DisparityMap,
                       cfg: PipelineConfig, workers: int | None = None,
                       sources: list[tuple[int, ViewMask]] | None = None
                       ) -> tuple[list[LightFieldMask], TimingRecord]:
    """Run the full per-segment pipeline over every subview.

    ``sources`` overrides automatic mask generation with caller-provided
    (segment_id, middle mask) pairs. Output is deterministic for fixed
    inputs regardless of ``workers``.
    """
    t_start = time.perf_counter()
    s_count, t_count, u_count, v_count = lf.dims
    mid = lf.middle
    timing = TimingRecord(num_views=s_count * t_count)

    if cfg.disparity_sign == -1:
        d = DisparityMap(-d.values, d.coherence, d.view)

    t0 = time.perf_counter()
    middle_session = None
    if sources is None:
        middle_session = backend.set_image(lf.middle_image())
        sources = segment_source(backend, lf, cfg, session=middle_session)
    timing.source_ms = (time.perf_counter() - t0) * 1e3
    timing.num_masks = len(sources)
    if not sources:
        if middle_session is not None:
            backend.release(middle_session)
        timing.total_ms = (time.perf_counter() - t_start) * 1e3
        return [], timing

    need_occlusion = cfg.enable_occlusion
    need_sessions = cfg.enable_refinement or need_occlusion
    pool_workers = workers or 1

    sessions: dict[tuple[int, int], BackendSession] = {}
    t0 = time.perf_counter()
    if need_sessions:
        if middle_session is None:
            middle_session = backend.set_image(lf.middle_image())
        sessions[(mid.s, mid.t)] = middle_session
        other_views = [(s, t) for s in range(s_count) for t in range(t_count)
                       if (s, t) != (mid.s, mid.t)]
        with ThreadPoolExecutor(max_workers=pool_workers) as pool:
            for view, session in zip(other_views, pool.map(
                    lambda st: backend.set_image(lf.views[st[0], st[1]]), other_views)):
                sessions[view] = session
    timing.sessions_ms = (time.perf_counter() - t0) * 1e3

    # per-segment source pixel coordinates and their disparities, shared
    # read-only by all view tasks
    t0 = time.perf_counter()
    d64 = d.values.astype(np.float64)
    src_coords = [src.coords() for _, src in sources]
    src_disp = [d64[c[:, 0], c[:, 1]] for c in src_coords]
    timing.propagate_ms = (time.perf_counter() - t0) * 1e3

    source_feats: list[MaskFeature | None] = [None] * len(sources)
    if need_occlusion:
        fm_mid = sessions[(mid.s, mid.t)].features
        for k, (_, src) in enumerate(sources):
            source_feats[k] = _mask_mean_feature_sampled(src, fm_mid, (u_count, v_count))

    results: list[list[list[tuple[np.ndarray, Stage, dict | None]]]] = [
        [[None] * t_count for _ in range(s_count)] for _ in sources]

    def process(task: tuple[int, int, int]) -> None:
        k, s, t = task
        empty = (np.zeros((u_count, v_count), dtype=bool), Stage.ABSENT, None)
        flat = _project_flat(src_coords[k], src_disp[k], mid, (s, t),
                             (u_count, v_count))
        if flat.size == 0:
            results[k][s][t] = empty
            return
        if need_occlusion:
            sims = _sampled_cosine(sessions[(s, t)].features, flat // v_count,
                                   flat % v_count, source_feats[k].vector,
                                   (u_count, v_count))
            keep = sims >= cfg.t_sim
            flat = flat[keep]
            coord_weights = sims[keep]
        else:
            coord_weights = np.ones(flat.size)
        if flat.size < cfg.min_mask_pixels:
            results[k][s][t] = empty
            return
        bits = np.zeros(u_count * v_count, dtype=bool)
        bits[flat] = True
        bits = bits.reshape(u_count, v_count)
        coords = np.stack([flat // v_count, flat % v_count], axis=1)
        wm = WeightedMask(ViewMask(bits), coords=coords, coord_weights=coord_weights)
        if cfg.enable_refinement:
            view_bits, stage, record = refine_and_select(backend, sessions[(s, t)], wm, cfg)
            if record is not None:
                record = {"view": [s, t], **record}
            results[k][s][t] = (view_bits.bits, stage, record)
        else:
            stage = Stage.OCCLUDED if need_occlusion else Stage.COARSE
            results[k][s][t] = (wm.mask.bits, stage, None)

    # view-major order keeps each view's feature tables hot across segments
    tasks = [(k, s, t) for s in range(s_count) for t in range(t_count)
             if (s, t) != (mid.s, mid.t)
             for k in range(len(sources))]
    t0 = time.perf_counter()
    if pool_workers > 1:
        with ThreadPoolExecutor(max_workers=pool_workers) as pool:
            list(pool.map(process, tasks))
    else:
        for task in tasks:
            process(task)
    timing.views_ms = (time.perf_counter() - t0) * 1e3

    masks = []
    for k, (seg_id, src) in enumerate(sources):
        out = LightFieldMask.empty(seg_id, (s_count, t_count, u_count, v_count))
        out.set_view(mid.s, mid.t, src.bits.copy(), Stage.COARSE)
        for s in range(s_count):
            for t in range(t_count):
                if (s, t) == (mid.s, mid.t):
                    continue
                bits, stage, record = results[k][s][t]
                if stage != Stage.ABSENT:
                    out.set_view(s, t, bits, stage)
                if record is not None:
                    out.prompt_log.append(record)
        masks.append(out)

    for session in sessions.values():
        backend.release(session)
    if middle_session is not None and not need_sessions:
        backend.release(middle_session)

    timing.total_ms = (time.perf_counter() - t_start) * 1e3
    return masks, timing
