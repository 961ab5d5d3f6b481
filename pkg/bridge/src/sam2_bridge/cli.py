"""Command line for the bridge server."""

from __future__ import annotations

import argparse
import logging
import sys

from .server import ServerConfig, serve


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sam2-bridge",
        description="Promptable-segmentation server speaking the framed "
                    "binary protocol on stdio or TCP")
    parser.add_argument("--model", default="hiera-small",
                        help="model variant, or 'synthetic' for the "
                             "dependency-free test model")
    parser.add_argument("--device", default="auto")
    parser.add_argument("--points-per-side", type=int, default=64)
    parser.add_argument("--patch-grid", type=int, default=16,
                        help="synthetic model: feature grid size")
    parser.add_argument("--embed-dim", type=int, default=32,
                        help="synthetic model: feature dimension")
    parser.add_argument("--feature-layer", default="image_embed",
                        help="which encoder tensor is exported as features")
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--stdio", action="store_true", default=True,
                       help="serve one client on stdin/stdout (default)")
    group.add_argument("--tcp", default=None, metavar="HOST:PORT")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING)
    args = build_parser().parse_args(argv)
    config = ServerConfig(model=args.model, device=args.device,
                          points_per_side=args.points_per_side,
                          patch_grid=args.patch_grid, embed_dim=args.embed_dim,
                          feature_layer=args.feature_layer)
    if args.tcp:
        host, _, port = args.tcp.rpartition(":")
        if not host or not port.isdigit():
            print(f"sam2-bridge: bad --tcp address {args.tcp!r}", file=sys.stderr)
            return 2
        config.listen = "tcp"
        config.host = host
        config.port = int(port)
    serve(config)
    return 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
