"""Naive reference implementations of the metrics, for cross-checking.

Everything here is written with explicit per-pixel loops and dictionaries,
no vectorization, so it shares no code with :mod:`lfseg.metrics` beyond
the data types. Reductions iterate in the same documented order (segments
ascending by id, views in scan order), which makes the fast and slow
results identical to the last bit on any input, not merely close.

Intended for small fixtures; cost grows with S*T*U*V per segment.
"""

from __future__ import annotations

from .core import GroundTruth, LightFieldMask, Stage, ViewIndex


def _set_pixels(bits) -> list[tuple[int, int]]:
    u_count, v_count = bits.shape
    return [(u, v) for u in range(u_count) for v in range(v_count) if bits[u, v]]


def _round_half_away(x: float) -> int:
    if x >= 0:
        return int(x + 0.5)
    return -int(-x + 0.5)


def slow_backproject(bits, gt_disp, view: tuple[int, int], middle: ViewIndex
                     ) -> set[tuple[int, int]]:
    u_count, v_count = bits.shape
    hits: set[tuple[int, int]] = set()
    for u, v in _set_pixels(bits):
        d = float(gt_disp[u, v])
        tu = _round_half_away(u - d * (middle.s - view[0]))
        tv = _round_half_away(v - d * (middle.t - view[1]))
        if 0 <= tu < u_count and 0 <= tv < v_count:
            hits.add((tu, tv))
    return hits


def _iou(a: set, b: set) -> float:
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def slow_siou(masks: list[LightFieldMask], gt: GroundTruth, middle: ViewIndex
              ) -> tuple[float | None, dict[int, float]]:
    per_segment: dict[int, float] = {}
    for m in sorted(masks, key=lambda x: x.segment_id):
        mid_set = set(_set_pixels(m.view(middle.s, middle.t)))
        if not mid_set:
            continue
        s_count, t_count = m.stage.shape
        ious = []
        for s in range(s_count):
            for t in range(t_count):
                if (s, t) == (middle.s, middle.t) or m.stage_at(s, t) == Stage.ABSENT:
                    continue
                back = slow_backproject(m.view(s, t), gt.disparity[s, t], (s, t), middle)
                ious.append(_iou(back, mid_set))
        if ious:
            per_segment[m.segment_id] = sum(ious) / len(ious)
    if not per_segment:
        return None, per_segment
    overall = sum(per_segment[k] for k in sorted(per_segment)) / len(per_segment)
    return overall, per_segment


def slow_lpp(masks: list[LightFieldMask], gt: GroundTruth, middle: ViewIndex) -> float | None:
    if not masks:
        return None
    pixel_ids: dict[tuple[int, int], set[int]] = {}
    for m in sorted(masks, key=lambda x: x.segment_id):
        s_count, t_count = m.stage.shape
        for s in range(s_count):
            for t in range(t_count):
                if m.stage_at(s, t) == Stage.ABSENT:
                    continue
                if (s, t) == (middle.s, middle.t):
                    hits = set(_set_pixels(m.view(s, t)))
                else:
                    hits = slow_backproject(m.view(s, t), gt.disparity[s, t], (s, t), middle)
                for p in hits:
                    pixel_ids.setdefault(p, set()).add(m.segment_id)
    if not pixel_ids:
        return None
    return sum(len(ids) for ids in pixel_ids.values()) / len(pixel_ids)


def slow_aa(masks: list[LightFieldMask], gt: GroundTruth) -> float | None:
    if not masks:
        return None
    ordered = sorted(masks, key=lambda x: x.segment_id)
    s_count, t_count = ordered[0].stage.shape
    per_view = []
    for s in range(s_count):
        for t in range(t_count):
            labels = gt.labels[s, t]
            correct = total = 0
            for m in ordered:
                if m.stage_at(s, t) == Stage.ABSENT:
                    continue
                counts: dict[int, int] = {}
                for u, v in _set_pixels(m.view(s, t)):
                    counts[int(labels[u, v])] = counts.get(int(labels[u, v]), 0) + 1
                if not counts:
                    continue
                best = max(sorted(counts), key=lambda lab: counts[lab])
                correct += counts[best]
                total += sum(counts.values())
            if total > 0:
                per_view.append(correct / total)
    if not per_view:
        return None
    return sum(per_view) / len(per_view)


def slow_ue(masks: list[LightFieldMask], gt: GroundTruth) -> float | None:
    if not masks:
        return None
    ordered = sorted(masks, key=lambda x: x.segment_id)
    s_count, t_count = ordered[0].stage.shape
    u_count, v_count = ordered[0].masks.shape[2:]
    per_view = []
    for s in range(s_count):
        for t in range(t_count):
            labels = gt.labels[s, t]
            error = 0
            for m in ordered:
                if m.stage_at(s, t) == Stage.ABSENT:
                    continue
                pixels = _set_pixels(m.view(s, t))
                area = len(pixels)
                counts: dict[int, int] = {}
                for u, v in pixels:
                    counts[int(labels[u, v])] = counts.get(int(labels[u, v]), 0) + 1
                for lab in sorted(counts):
                    error += min(counts[lab], area - counts[lab])
            per_view.append(error / (u_count * v_count))
    return sum(per_view) / len(per_view)
