"""Command-line entry point: synth | disparity | segment | metrics.

Machine-readable output goes to files only; progress and errors go to
stderr. Exit codes: 0 success, 1 runtime/I-O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .core import LfsegError, LightField, ViewIndex
from . import io as lfio
from .backend import ExternalBackend, OracleBackend, StubBackend, Transport
from .disparity import DisparityParams, estimate_disparity
from .metrics import evaluate
from .pipeline import PipelineConfig, segment_lightfield
from . import slowmetrics
from .synthgen import generate, load_scene_spec, make_random_scene, save_scene

SERVER_ENV = "LFSEG_SERVER"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _err(msg: str) -> None:
    print(f"lfseg: {msg}", file=sys.stderr)


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_pair(text: str, what: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise ValueError(f"{what} must look like 9x9, got {text!r}")
    return int(parts[0]), int(parts[1])


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        s_count, t_count = _parse_pair(args.views, "--views")
        u_count, v_count = _parse_pair(args.size, "--size")
    except ValueError as exc:
        _err(str(exc))
        return EXIT_USAGE
    if s_count < 3 or t_count < 3:
        _err(f"--views {args.views}: disparity estimation needs at least 3x3 views")
        return EXIT_USAGE
    if args.objects < 0:
        _err("--objects must be >= 0")
        return EXIT_USAGE
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        _err(f"output directory {out} exists and is not empty")
        return EXIT_RUNTIME
    spec = make_random_scene(
        (s_count, t_count, u_count, v_count), args.objects, args.seed,
        feature_dim=args.feature_dim, patch_grid=args.patch_grid,
        noise_sigma=args.noise_sigma, subpixel=args.subpixel)
    scene = generate(spec)
    save_scene(scene, out)
    _info(f"wrote {s_count}x{t_count} scene with {len(spec.objects)} objects to {out}")
    return EXIT_OK


def cmd_disparity(args: argparse.Namespace) -> int:
    lf = lfio.load_lightfield(args.input)
    params = DisparityParams(
        sigma_grad=args.sigma_grad, sigma_tensor=args.sigma_tensor,
        coherence_min=args.coherence_min, disparity_sign=args.disparity_sign)
    dmap = estimate_disparity(lf, params)
    out = Path(args.out) if args.out else Path(args.input) / "disparity"
    lfio.save_disparity(dmap, out, params_echo=params.to_dict())
    _info(f"wrote disparity map to {out}")
    return EXIT_OK


def _build_backend(args: argparse.Namespace, lf: LightField, input_dir: Path):
    if args.backend == "stub":
        return StubBackend()
    if args.backend == "oracle":
        if lf.gt is None or lf.gt.labels is None:
            raise LfsegError("oracle backend requires ground-truth labels under gt/labels")
        spec = load_scene_spec(input_dir)
        patch_grid = args.oracle_patch_grid or (spec.patch_grid if spec else 16)
        features = lfio.FeatureStore(input_dir, lf.dims)
        return OracleBackend(lf, lf.gt.labels, features, patch_grid)
    spec_str = args.server or os.environ.get(SERVER_ENV)
    if not spec_str:
        raise LfsegError("external backend needs --server or " + SERVER_ENV)
    return ExternalBackend(Transport.parse(spec_str), pool_size=args.pool_size)


def _resolve_disparity(args: argparse.Namespace, lf: LightField, input_dir: Path):
    if args.disparity == "estimate":
        return estimate_disparity(lf, DisparityParams(disparity_sign=1))
    if args.disparity == "gt":
        if lf.gt is None or lf.gt.disparity is None:
            raise LfsegError("--disparity gt requires ground truth under gt/disparity")
        from .core import DisparityMap
        mid = lf.middle
        values = lf.gt.disparity[mid.s, mid.t]
        return DisparityMap(values, np.ones_like(values), mid)
    return lfio.load_disparity(args.disparity, dims=lf.dims[2:], view=tuple(lf.middle))


def cmd_segment(args: argparse.Namespace) -> int:
    input_dir = Path(args.input)
    lf = lfio.load_lightfield(input_dir)
    cfg = PipelineConfig(
        t_sim=args.t_sim, t_iou=args.t_iou, points_per_side=args.points_per_side,
        enable_refinement=not args.no_ref, enable_occlusion=not args.no_occ,
        min_mask_pixels=args.min_mask_pixels, disparity_sign=args.disparity_sign)
    backend = _build_backend(args, lf, input_dir)
    dmap = _resolve_disparity(args, lf, input_dir)
    workers = args.workers or os.cpu_count() or 1
    try:
        masks, timing = segment_lightfield(backend, lf, dmap, cfg, workers=workers)
    finally:
        backend.close()
    out = Path(args.out)
    config_echo = {
        "pipeline": cfg.to_dict(),
        "backend": args.backend,
        "disparity": args.disparity,
        "input": str(input_dir),
        "seed": args.seed,
    }
    lfio.save_masks(masks, out, lf.middle, config_echo=config_echo)
    lfio.write_json(out / "timing.json", {**timing.to_dict(), "workers": workers})
    _info(f"wrote {len(masks)} segments to {out} "
          f"({timing.per_mask_per_subview_ms or 0:.3f} ms/mask/subview)")
    return EXIT_OK


def cmd_metrics(args: argparse.Namespace) -> int:
    input_dir = Path(args.input)
    lf = lfio.load_lightfield(input_dir)
    if lf.gt is None:
        _err(f"no ground truth under {input_dir}/gt")
        return EXIT_RUNTIME
    masks, manifest = lfio.load_masks(args.pred)
    timing_path = Path(args.pred) / "timing.json"
    total_ms = None
    if timing_path.exists():
        total_ms = lfio.read_json(timing_path).get("total_ms")
    report = evaluate(masks, lf.gt, lf.dims, lf.middle, total_wall_ms=total_ms)
    if args.brute_force_check:
        u_count, v_count = lf.dims[2:]
        if u_count > 16 or v_count > 16:
            _err(f"--brute-force-check is limited to 16x16 pixels, scene is {u_count}x{v_count}")
            return EXIT_RUNTIME
        slow_siou, _ = slowmetrics.slow_siou(masks, lf.gt, lf.middle)
        slow_aa = slowmetrics.slow_aa(masks, lf.gt)
        slow_ue = slowmetrics.slow_ue(masks, lf.gt)
        mismatches = [name for name, fast, slow in (
            ("siou", report.siou, slow_siou),
            ("aa", report.aa, slow_aa),
            ("ue", report.ue, slow_ue),
        ) if fast != slow]
        if mismatches:
            _err(f"brute-force check failed for: {', '.join(mismatches)}")
            return EXIT_RUNTIME
        _info("brute-force check passed (siou, aa, ue)")
    out = Path(args.out)
    lfio.write_json(out, report.to_dict(config_echo=manifest.get("config")))
    _info(f"wrote report to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfseg",
        description="View-consistent light field segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene with exact ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--views", default="9x9")
    p.add_argument("--size", default="128x128")
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--feature-dim", type=int, default=None)
    p.add_argument("--patch-grid", type=int, default=None)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.add_argument("--subpixel", action="store_true",
                   help="allow half-pixel disparities (exercises rounding)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("disparity", help="estimate the middle-view disparity map")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--sigma-grad", type=float, default=DisparityParams.sigma_grad)
    p.add_argument("--sigma-tensor", type=float, default=DisparityParams.sigma_tensor)
    p.add_argument("--coherence-min", type=float, default=DisparityParams.coherence_min)
    p.add_argument("--disparity-sign", type=int, choices=(1, -1), default=1)
    p.set_defaults(func=cmd_disparity)

    p = sub.add_parser("segment", help="segment a light field into view-consistent masks")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("oracle", "stub", "external"), default="oracle")
    p.add_argument("--server", default=None,
                   help="external transport: spawn:CMD... or tcp:host:port "
                        f"(default ${SERVER_ENV})")
    p.add_argument("--pool-size", type=int, default=4)
    p.add_argument("--disparity", default="estimate",
                   help="'estimate', 'gt', or a path to a disparity directory/.f32 file")
    p.add_argument("--disparity-sign", type=int, choices=(1, -1), default=1)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-ref", action="store_true", help="disable prompt refinement")
    p.add_argument("--no-occ", action="store_true", help="disable occlusion filtering")
    p.add_argument("--t-sim", type=float, default=PipelineConfig.t_sim)
    p.add_argument("--t-iou", type=float, default=PipelineConfig.t_iou)
    p.add_argument("--points-per-side", type=int, default=PipelineConfig.points_per_side)
    p.add_argument("--min-mask-pixels", type=int, default=PipelineConfig.min_mask_pixels)
    p.add_argument("--oracle-patch-grid", type=int, default=None)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("metrics", help="score predictions against ground truth")
    p.add_argument("--pred", required=True, help="segmentation output directory")
    p.add_argument("--input", required=True, help="scene directory with ground truth")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--brute-force-check", action="store_true",
                   help="recompute SIoU/AA/UE with the naive reference (<=16x16 scenes)")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LfsegError as exc:
        _err(str(exc))
        return EXIT_RUNTIME
    except OSError as exc:
        _err(str(exc))
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
