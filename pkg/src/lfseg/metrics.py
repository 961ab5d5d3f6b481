"""Cross-view consistency and segmentation-quality metrics.

Consistency metrics compare each view's mask against the middle view
after backprojecting it with that view's ground-truth disparity:

- SIoU: per segment, the mean IoU between backprojected view masks and
  the middle-view mask; overall value is the unweighted mean over
  segments. Views where a segment is absent are skipped.
- LPP: labels per pixel. Each segment's backprojections from all views
  (middle included) are unioned onto the middle grid; LPP is the mean
  number of distinct segment ids per touched pixel (1.0 = perfectly
  consistent, non-overlapping segmentation).

Quality metrics compare per-view predictions against per-view labels:

- AA: achievable accuracy. Each predicted mask is assigned the label it
  overlaps most (ties to the smaller label id; label 0, the unlabeled
  background, is assignable); accuracy counts (mask, pixel) incidences
  whose assigned label matches the pixel's label. Only segmented pixels
  enter the denominator.
- UE: undersegmentation error. Per view, for every label region S and
  every predicted mask P intersecting it, add min(|P & S|, |P - S|);
  normalize by the pixel count. 0 means every prediction nests inside
  one label region.
- Coverage: fraction of all (s, t, u, v) pixels under at least one mask.
- Time: milliseconds per mask per subview.

All reductions iterate segments in ascending id and views in scan order;
per-view values are exact integer-count ratios. The naive reference
implementation in :mod:`lfseg.slowmetrics` mirrors this, so the two agree
to the last bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    GroundTruth,
    LightFieldMask,
    Stage,
    ViewIndex,
    mask_iou,
    round_half_away,
)

REPORT_SCHEMA = "lfseg-report/1"


@dataclass
class MetricsReport:
    siou: float | None
    lpp: float | None
    aa: float | None
    ue: float | None
    coverage: float
    time_ms_per_mask_per_subview: float | None
    per_segment_siou: dict[int, float] = field(default_factory=dict)
    num_segments: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self, config_echo: dict | None = None) -> dict:
        return {
            "schema": REPORT_SCHEMA,
            "siou": self.siou,
            "lpp": self.lpp,
            "aa": self.aa,
            "ue": self.ue,
            "coverage": self.coverage,
            "time_ms_per_mask_per_subview": self.time_ms_per_mask_per_subview,
            "per_segment_siou": {str(k): v for k, v in sorted(self.per_segment_siou.items())},
            "num_segments": self.num_segments,
            "warnings": self.warnings,
            "config": config_echo,
        }


def backproject_mask(bits: np.ndarray, gt_disp: np.ndarray, view: tuple[int, int],
                     middle: ViewIndex) -> np.ndarray:
    """Map a view mask to middle-view coordinates with per-pixel disparity.

    Each set pixel moves by its own ground-truth disparity, rounds half
    away from zero; out-of-bounds hits are discarded and the results
    unioned.
    """
    bits = np.asarray(bits, dtype=bool)
    u_count, v_count = bits.shape
    out = np.zeros_like(bits)
    coords = np.argwhere(bits)
    if coords.shape[0] == 0:
        return out
    disp = np.asarray(gt_disp, dtype=np.float64)[coords[:, 0], coords[:, 1]]
    tu = round_half_away(coords[:, 0] - disp * (middle.s - view[0]))
    tv = round_half_away(coords[:, 1] - disp * (middle.t - view[1]))
    inside = (tu >= 0) & (tu < u_count) & (tv >= 0) & (tv < v_count)
    out[tu[inside], tv[inside]] = True
    return out


def _sorted_segments(masks: list[LightFieldMask]) -> list[LightFieldMask]:
    return sorted(masks, key=lambda m: m.segment_id)


def compute_siou(masks: list[LightFieldMask], gt: GroundTruth, middle: ViewIndex
                 ) -> tuple[float | None, dict[int, float], list[str]]:
    warnings: list[str] = []
    per_segment: dict[int, float] = {}
    for m in _sorted_segments(masks):
        mid_bits = m.view(middle.s, middle.t)
        if not mid_bits.any():
            warnings.append(f"segment {m.segment_id}: empty middle view, skipped in SIoU")
            continue
        s_count, t_count = m.stage.shape
        ious = []
        for s in range(s_count):
            for t in range(t_count):
                if (s, t) == (middle.s, middle.t) or m.stage_at(s, t) == Stage.ABSENT:
                    continue
                back = backproject_mask(m.view(s, t), gt.disparity[s, t], (s, t), middle)
                ious.append(mask_iou(back, mid_bits))
        if not ious:
            warnings.append(
                f"segment {m.segment_id}: present only in the middle view, SIoU undefined")
            continue
        per_segment[m.segment_id] = sum(ious) / len(ious)
    if not per_segment:
        warnings.append("SIoU undefined: no segment has non-middle views")
        return None, per_segment, warnings
    overall = sum(per_segment[k] for k in sorted(per_segment)) / len(per_segment)
    return overall, per_segment, warnings


def compute_lpp(masks: list[LightFieldMask], gt: GroundTruth, middle: ViewIndex
                ) -> float | None:
    if not masks:
        return None
    dims = masks[0].masks.shape[2:]
    hit_total = np.zeros(dims, dtype=np.int64)
    for m in _sorted_segments(masks):
        hits = np.zeros(dims, dtype=bool)
        s_count, t_count = m.stage.shape
        for s in range(s_count):
            for t in range(t_count):
                if m.stage_at(s, t) == Stage.ABSENT:
                    continue
                if (s, t) == (middle.s, middle.t):
                    hits |= m.view(s, t)
                else:
                    hits |= backproject_mask(m.view(s, t), gt.disparity[s, t], (s, t), middle)
        hit_total += hits
    touched = int(np.count_nonzero(hit_total > 0))
    if touched == 0:
        return None
    return int(hit_total.sum()) / touched


def compute_aa(masks: list[LightFieldMask], gt: GroundTruth) -> float | None:
    """Mean over views of (correctly assigned incidences / all incidences)."""
    if not masks:
        return None
    ordered = _sorted_segments(masks)
    s_count, t_count = ordered[0].stage.shape
    per_view: list[float] = []
    for s in range(s_count):
        for t in range(t_count):
            labels = gt.labels[s, t]
            correct = total = 0
            for m in ordered:
                if m.stage_at(s, t) == Stage.ABSENT:
                    continue
                overlap = np.bincount(labels[m.view(s, t)].ravel())
                if overlap.size == 0:
                    continue
                correct += int(overlap.max())
                total += int(overlap.sum())
            if total > 0:
                per_view.append(correct / total)
    if not per_view:
        return None
    return sum(per_view) / len(per_view)


def compute_ue(masks: list[LightFieldMask], gt: GroundTruth) -> float | None:
    if not masks:
        return None
    ordered = _sorted_segments(masks)
    s_count, t_count = ordered[0].stage.shape
    u_count, v_count = ordered[0].masks.shape[2:]
    per_view: list[float] = []
    for s in range(s_count):
        for t in range(t_count):
            labels = gt.labels[s, t]
            error = 0
            for m in ordered:
                if m.stage_at(s, t) == Stage.ABSENT:
                    continue
                bits = m.view(s, t)
                area = int(np.count_nonzero(bits))
                overlap = np.bincount(labels[bits].ravel())
                for count in overlap:
                    c = int(count)
                    if c > 0:
                        error += min(c, area - c)
            per_view.append(error / (u_count * v_count))
    return sum(per_view) / len(per_view)


def compute_coverage(masks: list[LightFieldMask], dims: tuple[int, int, int, int]) -> float:
    s_count, t_count, u_count, v_count = dims
    total = s_count * t_count * u_count * v_count
    if total == 0:
        return 0.0
    if not masks:
        return 0.0
    covered = np.zeros((s_count, t_count, u_count, v_count), dtype=bool)
    for m in masks:
        covered |= m.masks
    return int(np.count_nonzero(covered)) / total


def evaluate(masks: list[LightFieldMask], gt: GroundTruth | None,
             dims: tuple[int, int, int, int], middle: ViewIndex,
             total_wall_ms: float | None = None) -> MetricsReport:
    """Assemble the full report; metrics whose ground truth is missing are null."""
    warnings: list[str] = []
    siou = lpp = None
    per_segment: dict[int, float] = {}
    if gt is not None and gt.disparity is not None:
        siou, per_segment, siou_warnings = compute_siou(masks, gt, middle)
        warnings.extend(siou_warnings)
        lpp = compute_lpp(masks, gt, middle)
        if masks and lpp is None:
            warnings.append("LPP undefined: no labeled pixels")
    else:
        warnings.append("no ground-truth disparity: SIoU and LPP omitted")
    aa = ue = None
    if gt is not None and gt.labels is not None:
        aa = compute_aa(masks, gt)
        ue = compute_ue(masks, gt)
    else:
        warnings.append("no ground-truth labels: AA and UE omitted")
    coverage = compute_coverage(masks, dims)
    time_ms = None
    if total_wall_ms is not None and masks:
        time_ms = total_wall_ms / (len(masks) * dims[0] * dims[1])
    return MetricsReport(
        siou=siou, lpp=lpp, aa=aa, ue=ue, coverage=coverage,
        time_ms_per_mask_per_subview=time_ms, per_segment_siou=per_segment,
        num_segments=len(masks), warnings=warnings)
