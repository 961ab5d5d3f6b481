"""Procedural layered scenes with exact ground truth.

Scenes are stacks of textured planar objects over a textured background,
each at its own disparity. Every view is rendered by shifting each layer by
the rounded projection offset for that view, painting back-to-front in
ascending disparity, so the generated labels, disparity maps, and
per-object visibility masks are exact by construction:

- every object pixel in view (i, j) is its middle-view pixel shifted by
  ``round(d*(s_m - i)), round(d*(t_m - j))``;
- a larger-disparity (nearer) layer always wins overlaps;
- per-pixel feature vectors equal the winning layer's unit feature vector
  plus Gaussian noise, and layer vectors are mutually orthogonalized, so
  feature similarity separates layers by construction.

Objects must be pairwise disjoint in the middle view and strictly nearer
than the background; occlusion then happens only away from the middle
view, which keeps the propagate-and-intersect identity with the visibility
masks exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import (
    GroundTruth,
    LfsegError,
    LightField,
    ViewIndex,
    middle_view,
    round_half_away,
)
from . import io as lfio

SCENE_META = "scene.json"
SCENE_SCHEMA = "lfseg-scene/1"

_FEATURE_NOISE_STREAM = 991  # rng namespace tag for per-view feature noise


class SceneSpecError(LfsegError):
    """Invalid scene specification."""


@dataclass(frozen=True)
class ObjectSpec:
    """One planar object.

    ``extent`` is in middle-view pixels: ``(u0, v0, height, width)`` for
    rects, ``(cu, cv, radius)`` for discs.
    """

    shape: str  # "rect" | "disc"
    extent: tuple
    disparity: float
    feature_seed: int = 0
    texture_seed: int = 0


@dataclass(frozen=True)
class BackgroundSpec:
    disparity: float = 0.0
    feature_seed: int = 1000
    texture_seed: int = 1000


@dataclass(frozen=True)
class SceneSpec:
    dims: tuple[int, int, int, int]  # (S, T, U, V)
    objects: tuple[ObjectSpec, ...] = ()
    background: BackgroundSpec = field(default_factory=BackgroundSpec)
    feature_dim: int = 16
    patch_grid: int = 16
    noise_sigma: float = 0.01
    rng_seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["objects"] = [dict(o, extent=list(o["extent"])) for o in d["objects"]]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        objects = tuple(
            ObjectSpec(o["shape"], tuple(o["extent"]), o["disparity"],
                       o.get("feature_seed", 0), o.get("texture_seed", 0))
            for o in d.get("objects", []))
        bg = d.get("background", {})
        return cls(
            dims=tuple(d["dims"]),
            objects=objects,
            background=BackgroundSpec(bg.get("disparity", 0.0),
                                      bg.get("feature_seed", 1000),
                                      bg.get("texture_seed", 1000)),
            feature_dim=d.get("feature_dim", 16),
            patch_grid=d.get("patch_grid", 16),
            noise_sigma=d.get("noise_sigma", 0.01),
            rng_seed=d.get("rng_seed", 0),
        )


def _footprint(obj: ObjectSpec, u_count: int, v_count: int) -> np.ndarray:
    mask = np.zeros((u_count, v_count), dtype=bool)
    if obj.shape == "rect":
        u0, v0, h, w = obj.extent
        mask[max(u0, 0):u0 + h, max(v0, 0):v0 + w] = True
    elif obj.shape == "disc":
        cu, cv, r = obj.extent
        uu, vv = np.mgrid[0:u_count, 0:v_count]
        mask = (uu - cu) ** 2 + (vv - cv) ** 2 <= r * r
    else:
        raise SceneSpecError(f"unknown object shape {obj.shape!r}")
    if not mask.any():
        raise SceneSpecError(f"object footprint is empty: {obj}")
    return mask


def _value_noise(rng: np.random.Generator, shape: tuple[int, int], smooth: float = 2.0) -> np.ndarray:
    """Smoothed noise stretched to [0, 1]; objects need gradients everywhere."""
    noise = gaussian_filter(rng.standard_normal(shape), smooth)
    lo, hi = noise.min(), noise.max()
    if hi - lo < 1e-9:
        return np.zeros(shape)
    return (noise - lo) / (hi - lo)


def _texture_rgb(seed: int, shape: tuple[int, int]) -> np.ndarray:
    rng = np.random.default_rng([seed, 7])
    base = rng.integers(110, 256, size=3)
    noise = _value_noise(rng, shape)
    rgb = base[None, None, :] * (0.35 + 0.65 * noise[:, :, None])
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def _shift_for(disparity: float, middle: ViewIndex, s: int, t: int) -> tuple[int, int]:
    return (int(round_half_away(disparity * (middle.s - s))),
            int(round_half_away(disparity * (middle.t - t))))


def _unit_features(spec: SceneSpec) -> np.ndarray:
    """Row e = unit feature vector of entity e (0 = background, k = object k).

    Vectors are Gram-Schmidt orthogonalized in entity order while the
    embedding dimension allows, making inter-layer cosines exactly zero.
    """
    k = spec.feature_dim
    seeds = [spec.background.feature_seed] + [o.feature_seed for o in spec.objects]
    vectors = np.zeros((len(seeds), k))
    for e, seed in enumerate(seeds):
        raw = np.random.default_rng([seed, 13]).standard_normal(k)
        for prev in vectors[:e]:
            raw = raw - np.dot(raw, prev) * prev
        norm = np.linalg.norm(raw)
        if norm < 1e-9:  # more entities than dimensions; fall back to raw
            raw = np.random.default_rng([seed, 13]).standard_normal(k)
            norm = np.linalg.norm(raw)
        vectors[e] = raw / norm
    return vectors


class SyntheticScene:
    """A rendered scene: light field, exact ground truth, visibility, features."""

    def __init__(self, spec: SceneSpec, lf: LightField, visible: list[np.ndarray],
                 feature_vectors: np.ndarray):
        self.spec = spec
        self.lf = lf
        self.visible = visible  # per object: (S, T, U, V) bool over middle coords
        self.feature_vectors = feature_vectors  # (1 + num_objects, K)

    @property
    def gt(self) -> GroundTruth:
        return self.lf.gt

    def feature_image(self, s: int, t: int) -> np.ndarray:
        """Per-pixel features of view (s, t): winner vector + Gaussian noise."""
        labels = self.lf.gt.labels[s, t]
        clean = self.feature_vectors[labels]
        rng = np.random.default_rng([self.spec.rng_seed, _FEATURE_NOISE_STREAM, s, t])
        noisy = clean + rng.normal(0.0, self.spec.noise_sigma, clean.shape)
        return noisy.astype(np.float32)

    def feature_images(self) -> np.ndarray:
        """All feature images materialized as (S, T, U, V, K); small scenes only."""
        s_count, t_count = self.lf.dims[:2]
        return np.stack([
            np.stack([self.feature_image(s, t) for t in range(t_count)])
            for s in range(s_count)
        ])

    def middle_label_mask(self, segment: int) -> np.ndarray:
        m = self.lf.middle
        return self.lf.gt.labels[m.s, m.t] == segment


def _validate(spec: SceneSpec) -> None:
    s_count, t_count, u_count, v_count = spec.dims
    if min(s_count, t_count, u_count, v_count) < 1:
        raise SceneSpecError(f"degenerate dims {spec.dims}")
    if spec.feature_dim < 1 or spec.patch_grid < 1:
        raise SceneSpecError("feature_dim and patch_grid must be >= 1")
    mid = middle_view(s_count, t_count)
    footprints = [_footprint(o, u_count, v_count) for o in spec.objects]
    for idx, (obj, fp) in enumerate(zip(spec.objects, footprints)):
        if obj.disparity < spec.background.disparity + 0.5:
            raise SceneSpecError(
                f"object {idx} disparity {obj.disparity} must exceed the background's "
                f"({spec.background.disparity}) by at least 0.5")
        us, vs = np.nonzero(fp)
        for s in range(s_count):
            for t in range(t_count):
                su, sv = _shift_for(obj.disparity, mid, s, t)
                if us.min() + su < 0 or us.max() + su >= u_count or \
                        vs.min() + sv < 0 or vs.max() + sv >= v_count:
                    raise SceneSpecError(
                        f"object {idx} leaves the frame in view ({s},{t})")
    for a in range(len(footprints)):
        for b in range(a + 1, len(footprints)):
            if (footprints[a] & footprints[b]).any():
                raise SceneSpecError(
                    f"objects {a} and {b} overlap in the middle view; layered scenes "
                    "must be disjoint there")


def generate(spec: SceneSpec) -> SyntheticScene:
    """Render the scene. Deterministic for a given spec."""
    _validate(spec)
    s_count, t_count, u_count, v_count = spec.dims
    mid = middle_view(s_count, t_count)
    footprints = [_footprint(o, u_count, v_count) for o in spec.objects]

    # Background texture lives on an extended canvas so every view samples
    # inside it after the background's own parallax shift.
    bg_d = spec.background.disparity
    pad = int(np.ceil(abs(bg_d) * max(mid.s, s_count - 1 - mid.s,
                                      mid.t, t_count - 1 - mid.t))) + 1
    bg_tex = _texture_rgb(spec.background.texture_seed, (u_count + 2 * pad, v_count + 2 * pad))

    object_tex = []
    object_coords = []
    for obj, fp in zip(spec.objects, footprints):
        us, vs = np.nonzero(fp)
        u0, v0 = us.min(), vs.min()
        tex = _texture_rgb(obj.texture_seed, (us.max() - u0 + 1, vs.max() - v0 + 1))
        object_tex.append(tex[us - u0, vs - v0])
        object_coords.append((us, vs))

    order = sorted(range(len(spec.objects)), key=lambda k: (spec.objects[k].disparity, k))

    views = np.zeros((s_count, t_count, u_count, v_count, 3), dtype=np.uint8)
    labels = np.zeros((s_count, t_count, u_count, v_count), dtype=np.int32)
    disparity = np.zeros((s_count, t_count, u_count, v_count), dtype=np.float32)
    visible = [np.zeros((s_count, t_count, u_count, v_count), dtype=bool)
               for _ in spec.objects]

    uu = np.arange(u_count)
    vv = np.arange(v_count)
    for s in range(s_count):
        for t in range(t_count):
            views[s, t] = _sample_background(bg_tex, bg_d, mid, s, t, pad, uu, vv)
            disparity[s, t] = bg_d
            for k in order:
                obj = spec.objects[k]
                us, vs = object_coords[k]
                su, sv = _shift_for(obj.disparity, mid, s, t)
                tu, tv = us + su, vs + sv
                inside = (tu >= 0) & (tu < u_count) & (tv >= 0) & (tv < v_count)
                views[s, t, tu[inside], tv[inside]] = object_tex[k][inside]
                labels[s, t, tu[inside], tv[inside]] = k + 1
                disparity[s, t, tu[inside], tv[inside]] = obj.disparity
            for k in range(len(spec.objects)):
                us, vs = object_coords[k]
                su, sv = _shift_for(spec.objects[k].disparity, mid, s, t)
                tu, tv = us + su, vs + sv
                inside = (tu >= 0) & (tu < u_count) & (tv >= 0) & (tv < v_count)
                won = np.zeros(len(us), dtype=bool)
                won[inside] = labels[s, t, tu[inside], tv[inside]] == k + 1
                visible[k][s, t, us[won], vs[won]] = True

    gt = GroundTruth(labels=labels, disparity=disparity)
    lf = LightField(views, mid, gt=gt)
    return SyntheticScene(spec, lf, visible, _unit_features(spec))


def _sample_background(bg_tex: np.ndarray, bg_d: float, mid: ViewIndex, s: int, t: int,
                       pad: int, uu: np.ndarray, vv: np.ndarray) -> np.ndarray:
    """View of the background plane.

    Integer parallax offsets index the texture exactly; fractional offsets
    sample it bilinearly, so a fractional-disparity plane produces truly
    linear EPI traces instead of rounding staircases.
    """
    su = bg_d * (mid.s - s)
    sv = bg_d * (mid.t - t)
    if su == int(su) and sv == int(sv):
        return bg_tex[np.ix_(uu - int(su) + pad, vv - int(sv) + pad)]
    x = uu - su + pad
    y = vv - sv + pad
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    ax = (x - x0)[:, None, None]
    ay = (y - y0)[None, :, None]
    tex = bg_tex.astype(np.float64)
    top = tex[np.ix_(x0, y0)] * (1 - ay) + tex[np.ix_(x0, y0 + 1)] * ay
    bot = tex[np.ix_(x0 + 1, y0)] * (1 - ay) + tex[np.ix_(x0 + 1, y0 + 1)] * ay
    return np.clip(np.rint(top * (1 - ax) + bot * ax), 0, 255).astype(np.uint8)


def downsample_features(feature_image: np.ndarray, patch_grid: int) -> np.ndarray:
    """Pool a per-pixel (U, V, K) feature image to a (P, P, K) patch grid.

    Patch p covers rows [p*U/P, (p+1)*U/P); fractional boundary rows and
    columns contribute by covered area. Acts as the stand-in patch encoder.
    """
    feature_image = np.asarray(feature_image)
    u_count, v_count, k = feature_image.shape
    p = int(patch_grid)
    if p < 1:
        raise LfsegError("patch_grid must be >= 1")
    if u_count % p == 0 and v_count % p == 0:
        bu, bv = u_count // p, v_count // p
        pooled = feature_image.reshape(p, bu, p, bv, k).mean(axis=(1, 3), dtype=np.float64)
        return pooled.astype(np.float32)
    wu = _overlap_weights(u_count, p)
    wv = _overlap_weights(v_count, p)
    num = np.einsum("pu,qv,uvk->pqk", wu, wv, feature_image.astype(np.float64))
    den = wu.sum(axis=1)[:, None, None] * wv.sum(axis=1)[None, :, None]
    return (num / den).astype(np.float32)


def _overlap_weights(n: int, p: int) -> np.ndarray:
    """(p, n) matrix of overlap lengths between patch intervals and pixels."""
    edges = np.arange(p + 1) * (n / p)
    weights = np.zeros((p, n))
    for i in range(p):
        lo, hi = edges[i], edges[i + 1]
        px = np.arange(n)
        weights[i] = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0.0, 1.0)
    return weights


def save_scene(scene: SyntheticScene, path: str | Path) -> None:
    """Write the canonical directory plus per-view features and the spec echo."""
    root = Path(path)
    lfio.save_lightfield(scene.lf, root)
    lfio.save_features(scene.feature_image, scene.lf.dims, root)
    lfio.write_json(root / SCENE_META, {"schema": SCENE_SCHEMA, "spec": scene.spec.to_dict()})


def load_scene_spec(path: str | Path) -> SceneSpec | None:
    meta = Path(path) / SCENE_META
    if not meta.exists():
        return None
    return SceneSpec.from_dict(lfio.read_json(meta)["spec"])


def make_random_scene(dims: tuple[int, int, int, int], num_objects: int, seed: int,
                      feature_dim: int | None = None, patch_grid: int | None = None,
                      noise_sigma: float = 0.01, subpixel: bool = False) -> SceneSpec:
    """Random scene spec: disjoint middle-view objects at mixed disparities.

    Integer disparities by default so projection round-trips are exact;
    ``subpixel`` adds 0.4-pixel offsets to exercise rounding paths (0.4
    rather than 0.5 keeps projected offsets away from rounding ties).
    """
    s_count, t_count, u_count, v_count = dims
    rng = np.random.default_rng([seed, 23])
    choices = [-2, -1, 1, 2, 3][: max(2, min(5, num_objects + 1))]
    disps = [float(rng.choice(choices)) for _ in range(num_objects)]
    if subpixel:
        disps = [d + 0.4 * float(rng.integers(0, 2)) for d in disps]
    bg_d = float(min(disps, default=0.5) - 1.0)
    max_step = max(s_count // 2, t_count // 2, 1)

    objects: list[ObjectSpec] = []
    occupied = np.zeros((u_count, v_count), dtype=bool)
    for k in range(num_objects):
        d = disps[k]
        margin = int(np.ceil(abs(d) * max_step)) + 2
        lo_u = max(6, u_count // 10)
        lo_v = max(6, v_count // 10)
        for _ in range(200):
            shape = "rect" if rng.integers(0, 2) == 0 else "disc"
            if shape == "rect":
                h = int(rng.integers(lo_u, max(lo_u + 2, u_count // 4)))
                w = int(rng.integers(lo_v, max(lo_v + 2, v_count // 4)))
                if margin + h >= u_count - margin or margin + w >= v_count - margin:
                    continue
                u0 = int(rng.integers(margin, u_count - margin - h))
                v0 = int(rng.integers(margin, v_count - margin - w))
                cand = ObjectSpec("rect", (u0, v0, h, w), d, feature_seed=seed * 100 + k,
                                  texture_seed=seed * 100 + 50 + k)
            else:
                r_lo = max(4, min(u_count, v_count) // 16)
                r = int(rng.integers(r_lo, max(r_lo + 2, min(u_count, v_count) // 8)))
                if margin + r + 1 >= u_count - margin - r - 1 or margin + r + 1 >= v_count - margin - r - 1:
                    continue
                cu = int(rng.integers(margin + r + 1, u_count - margin - r - 1))
                cv = int(rng.integers(margin + r + 1, v_count - margin - r - 1))
                cand = ObjectSpec("disc", (cu, cv, r), d, feature_seed=seed * 100 + k,
                                  texture_seed=seed * 100 + 50 + k)
            fp = _footprint(cand, u_count, v_count)
            if not (fp & occupied).any():
                occupied |= fp
                objects.append(cand)
                break
        else:
            raise SceneSpecError(
                f"could not place object {k} without middle-view overlap; "
                "reduce object count or enlarge the frame")

    n_entities = num_objects + 1
    feature_dim = feature_dim or max(16, 1 << int(np.ceil(np.log2(max(2, n_entities)))))
    patch_grid = patch_grid or min(16, u_count, v_count)
    return SceneSpec(
        dims=dims,
        objects=tuple(objects),
        background=BackgroundSpec(disparity=bg_d, feature_seed=seed * 100 + 90,
                                  texture_seed=seed * 100 + 91),
        feature_dim=feature_dim,
        patch_grid=patch_grid,
        noise_sigma=noise_sigma,
        rng_seed=seed,
    )
