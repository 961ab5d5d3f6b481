"""Directory formats for light fields, ground truth, disparity, and masks.

Canonical light field directory::

    lf.json                     {"views": [S, T], "height": U, "width": V,
                                 "middle": [s_m, t_m]}
    views/{s}_{t}.png           8-bit RGB subviews
    gt/labels/{s}_{t}.png       16-bit single-channel integer labels (optional)
    gt/disparity/{s}_{t}.f32    raw little-endian float32, row-major (optional)
    gt/features/{s}_{t}.f32     raw float32, row-major (U, V, K) (optional)

Segmentation output directory::

    masks/{segment_id}/{s}_{t}.png   8-bit, 0/255
    manifest.json                    segment ids, stages, prompt records

All load/save pairs round-trip bit-exactly. Different datasets' naming
schemes are handled through :class:`LayoutConfig` filename patterns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    GroundTruth,
    LfsegError,
    LightField,
    LightFieldMask,
    DisparityMap,
    Stage,
    ViewIndex,
    middle_view,
)

LF_META = "lf.json"
MASK_MANIFEST = "manifest.json"
MASK_SCHEMA = "lfseg-masks/1"
DISPARITY_SCHEMA = "lfseg-disparity/1"


class LightFieldIOError(LfsegError):
    """I/O failure, carrying the offending path and view when known."""

    def __init__(self, message: str, path: Path | str | None = None,
                 view: tuple[int, int] | None = None):
        super().__init__(message)
        self.path = Path(path) if path is not None else None
        self.view = view


@dataclass(frozen=True)
class LayoutConfig:
    """Filename patterns relative to the dataset root.

    ``index_base`` shifts the view indices used in filenames (datasets that
    count views from 1 use ``index_base=1``).
    """

    view_pattern: str = "views/{s}_{t}.png"
    label_pattern: str = "gt/labels/{s}_{t}.png"
    disparity_pattern: str = "gt/disparity/{s}_{t}.f32"
    feature_pattern: str = "gt/features/{s}_{t}.f32"
    index_base: int = 0

    def view_path(self, root: Path, s: int, t: int) -> Path:
        return root / self.view_pattern.format(s=s + self.index_base, t=t + self.index_base)

    def label_path(self, root: Path, s: int, t: int) -> Path:
        return root / self.label_pattern.format(s=s + self.index_base, t=t + self.index_base)

    def disparity_path(self, root: Path, s: int, t: int) -> Path:
        return root / self.disparity_pattern.format(s=s + self.index_base, t=t + self.index_base)

    def feature_path(self, root: Path, s: int, t: int) -> Path:
        return root / self.feature_pattern.format(s=s + self.index_base, t=t + self.index_base)


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fp:
        json.dump(obj, fp, indent=2, sort_keys=True)
        fp.write("\n")


def read_json(path: Path):
    with open(path, "r", encoding="utf-8") as fp:
        return json.load(fp)


def write_f32(path: Path, array: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(array, dtype="<f4").tofile(path)


def read_f32(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise LightFieldIOError(
            f"{path}: expected {expected} float32 values, found {data.size}", path=path)
    return data.reshape(shape)


def write_rgb(path: Path, image: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB").save(path)


def read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    return arr


def write_labels(path: Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if labels.min(initial=0) < 0 or labels.max(initial=0) > np.iinfo(np.uint16).max:
        raise LightFieldIOError(f"{path}: labels out of uint16 range", path=path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(labels.astype(np.uint16)).save(path)


def read_labels(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img)
    return arr.astype(np.int32)


def write_mask_png(path: Path, bits: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr > 127


def load_lightfield(path: str | Path, layout: LayoutConfig | None = None,
                    dims: tuple[int, int] | None = None,
                    middle: tuple[int, int] | None = None) -> LightField:
    """Load a light field directory, attaching ground truth when present.

    ``dims`` (S, T) and ``middle`` are only needed when the directory has no
    ``lf.json`` (pattern-adapter mode for external datasets).
    """
    root = Path(path)
    layout = layout or LayoutConfig()
    meta_path = root / LF_META
    if meta_path.exists():
        meta = read_json(meta_path)
        s_count, t_count = (int(x) for x in meta["views"])
        if middle is None and "middle" in meta:
            middle = tuple(int(x) for x in meta["middle"])
    elif dims is not None:
        s_count, t_count = dims
    else:
        raise LightFieldIOError(f"{meta_path} not found and no dims given", path=meta_path)
    if middle is None:
        middle = middle_view(s_count, t_count)

    views = None
    for s in range(s_count):
        for t in range(t_count):
            vp = layout.view_path(root, s, t)
            if not vp.exists():
                raise LightFieldIOError(f"missing view ({s},{t}): {vp}", path=vp, view=(s, t))
            img = read_rgb(vp)
            if views is None:
                views = np.zeros((s_count, t_count) + img.shape, dtype=np.uint8)
            elif img.shape != views.shape[2:]:
                raise LightFieldIOError(
                    f"view ({s},{t}) has shape {img.shape}, expected {views.shape[2:]}",
                    path=vp, view=(s, t))
            views[s, t] = img

    gt = _load_ground_truth(root, layout, views.shape[:4])
    return LightField(views, ViewIndex(*middle), gt=gt)


def _load_ground_truth(root: Path, layout: LayoutConfig,
                       dims: tuple[int, int, int, int]) -> GroundTruth | None:
    s_count, t_count, u_count, v_count = dims
    labels = disparity = None
    if layout.label_path(root, 0, 0).parent.is_dir():
        labels = np.zeros((s_count, t_count, u_count, v_count), dtype=np.int32)
        for s in range(s_count):
            for t in range(t_count):
                lp = layout.label_path(root, s, t)
                if not lp.exists():
                    raise LightFieldIOError(f"missing labels ({s},{t}): {lp}", path=lp, view=(s, t))
                arr = read_labels(lp)
                if arr.shape != (u_count, v_count):
                    raise LightFieldIOError(
                        f"labels ({s},{t}) have shape {arr.shape}, expected {(u_count, v_count)}",
                        path=lp, view=(s, t))
                labels[s, t] = arr
    if layout.disparity_path(root, 0, 0).parent.is_dir():
        disparity = np.zeros((s_count, t_count, u_count, v_count), dtype=np.float32)
        for s in range(s_count):
            for t in range(t_count):
                dp = layout.disparity_path(root, s, t)
                if not dp.exists():
                    raise LightFieldIOError(f"missing disparity ({s},{t}): {dp}", path=dp, view=(s, t))
                disparity[s, t] = read_f32(dp, (u_count, v_count))
    if labels is None and disparity is None:
        return None
    return GroundTruth(labels=labels, disparity=disparity)


def save_lightfield(lf: LightField, path: str | Path, layout: LayoutConfig | None = None) -> None:
    root = Path(path)
    layout = layout or LayoutConfig()
    s_count, t_count, u_count, v_count = lf.dims
    write_json(root / LF_META, {
        "views": [s_count, t_count],
        "height": u_count,
        "width": v_count,
        "middle": [lf.middle.s, lf.middle.t],
    })
    for s in range(s_count):
        for t in range(t_count):
            write_rgb(layout.view_path(root, s, t), lf.views[s, t])
    if lf.gt is not None:
        if lf.gt.labels is not None:
            for s in range(s_count):
                for t in range(t_count):
                    write_labels(layout.label_path(root, s, t), lf.gt.labels[s, t])
        if lf.gt.disparity is not None:
            for s in range(s_count):
                for t in range(t_count):
                    write_f32(layout.disparity_path(root, s, t), lf.gt.disparity[s, t])


class FeatureStore:
    """Lazy per-view reader of ``gt/features/{s}_{t}.f32`` files."""

    def __init__(self, root: str | Path, dims: tuple[int, int, int, int],
                 embed_dim: int | None = None, layout: LayoutConfig | None = None):
        self.root = Path(root)
        self.layout = layout or LayoutConfig()
        self.dims = dims
        first = self.layout.feature_path(self.root, 0, 0)
        if not first.exists():
            raise LightFieldIOError(f"missing features (0,0): {first}", path=first, view=(0, 0))
        if embed_dim is None:
            u_count, v_count = dims[2], dims[3]
            per_pixel = first.stat().st_size / (4 * u_count * v_count)
            if per_pixel != int(per_pixel) or per_pixel < 1:
                raise LightFieldIOError(f"{first}: size is not a multiple of U*V*4", path=first)
            embed_dim = int(per_pixel)
        self.embed_dim = embed_dim

    def __call__(self, s: int, t: int) -> np.ndarray:
        u_count, v_count = self.dims[2], self.dims[3]
        fp = self.layout.feature_path(self.root, s, t)
        if not fp.exists():
            raise LightFieldIOError(f"missing features ({s},{t}): {fp}", path=fp, view=(s, t))
        return read_f32(fp, (u_count, v_count, self.embed_dim))


def save_features(provider, dims: tuple[int, int, int, int], path: str | Path,
                  layout: LayoutConfig | None = None) -> None:
    root = Path(path)
    layout = layout or LayoutConfig()
    for s in range(dims[0]):
        for t in range(dims[1]):
            write_f32(layout.feature_path(root, s, t), provider(s, t))


def save_disparity(dmap: DisparityMap, out_dir: str | Path, params_echo: dict | None = None) -> None:
    """Write ``disparity.f32`` + ``coherence.f32`` + a JSON sidecar with dims."""
    root = Path(out_dir)
    write_f32(root / "disparity.f32", dmap.values)
    write_f32(root / "coherence.f32", dmap.coherence)
    sidecar = {
        "schema": DISPARITY_SCHEMA,
        "height": int(dmap.values.shape[0]),
        "width": int(dmap.values.shape[1]),
        "view": [dmap.view.s, dmap.view.t],
    }
    if params_echo:
        sidecar["params"] = params_echo
    write_json(root / "disparity.json", sidecar)


def load_disparity(path: str | Path, dims: tuple[int, int] | None = None,
                   view: tuple[int, int] | None = None) -> DisparityMap:
    """Load a disparity map from a sidecar directory or a bare ``.f32`` file.

    For a bare file, ``dims`` and ``view`` must be supplied.
    """
    p = Path(path)
    if p.is_dir():
        sidecar = read_json(p / "disparity.json")
        dims = (int(sidecar["height"]), int(sidecar["width"]))
        view = tuple(int(x) for x in sidecar["view"])
        values = read_f32(p / "disparity.f32", dims)
        coh_path = p / "coherence.f32"
        coherence = read_f32(coh_path, dims) if coh_path.exists() else np.ones(dims, dtype=np.float32)
        return DisparityMap(values, coherence, ViewIndex(*view))
    if dims is None or view is None:
        raise LightFieldIOError(f"{p}: bare .f32 needs explicit dims and view", path=p)
    values = read_f32(p, dims)
    return DisparityMap(values, np.ones(dims, dtype=np.float32), ViewIndex(*view))


def save_masks(masks: list[LightFieldMask], out_dir: str | Path,
               middle: ViewIndex, config_echo: dict | None = None) -> dict:
    """Write per-segment per-view mask PNGs plus ``manifest.json``.

    Views with stage ``absent`` get no file; the manifest's stage grid is the
    authority. Returns the manifest dict.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    if masks:
        s_count, t_count, u_count, v_count = masks[0].masks.shape
        for m in masks:
            if m.masks.shape != masks[0].masks.shape:
                raise LightFieldIOError("masks disagree on light field dims")
    else:
        s_count = t_count = u_count = v_count = 0
    segments = []
    for m in masks:
        for s in range(s_count):
            for t in range(t_count):
                if m.stage_at(s, t) != Stage.ABSENT:
                    write_mask_png(root / "masks" / str(m.segment_id) / f"{s}_{t}.png", m.masks[s, t])
        segments.append({
            "id": m.segment_id,
            "middle_pixels": int(np.count_nonzero(m.masks[middle.s, middle.t])) if s_count else 0,
            "stages": m.stage_labels(),
            "prompts": m.prompt_log,
        })
    manifest = {
        "schema": MASK_SCHEMA,
        "views": [s_count, t_count],
        "height": u_count,
        "width": v_count,
        "middle": [middle.s, middle.t],
        "config": config_echo,
        "segments": segments,
    }
    write_json(root / MASK_MANIFEST, manifest)
    return manifest


def load_masks(path: str | Path) -> tuple[list[LightFieldMask], dict]:
    root = Path(path)
    manifest = read_json(root / MASK_MANIFEST)
    s_count, t_count = (int(x) for x in manifest["views"])
    u_count, v_count = int(manifest["height"]), int(manifest["width"])
    masks = []
    for seg in manifest["segments"]:
        m = LightFieldMask.empty(int(seg["id"]), (s_count, t_count, u_count, v_count))
        for s in range(s_count):
            for t in range(t_count):
                stage = Stage.from_label(seg["stages"][s][t])
                if stage == Stage.ABSENT:
                    continue
                mp = root / "masks" / str(seg["id"]) / f"{s}_{t}.png"
                if not mp.exists():
                    raise LightFieldIOError(
                        f"missing mask file for segment {seg['id']} view ({s},{t})",
                        path=mp, view=(s, t))
                m.set_view(s, t, read_mask_png(mp), stage)
        m.prompt_log = list(seg.get("prompts", []))
        masks.append(m)
    return masks, manifest
