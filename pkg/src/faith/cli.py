"""Command line interface.

Subcommands: info, mce, train, segment, preview, serve.  Usage errors exit
with 2 (argparse), runtime failures with 1.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BorderSeedError, SolverError, VolumeFormatError
from .features import DEFAULT_FEATURES, FeatureConfig
from .mce import Histogram, mce_threshold
from .segmenter import (
    SeedSet,
    decide_slice,
    global_threshold_volume,
    segment,
    train_from_seeds,
)
from .solver import FaithModel
from .tuning import HyperGrid
from .volume import extract_environment, load_volume


def _parse_triple(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z got {text!r}")
    return tuple(int(p) for p in parts)


def _load_seed_file(path) -> list[tuple[int, int, int]]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("positions", data.get("seeds"))
    if not isinstance(data, list):
        raise ValueError(f"seed file {path} must hold a list of [x, y, z] triples")
    return [tuple(int(c) for c in p) for p in data]


def _cmd_info(args) -> int:
    vol = load_volume(args.volume)
    m = vol.meta
    print(f"dims: {m.dims[0]} x {m.dims[1]} x {m.dims[2]}")
    print(f"dtype: {m.dtype}")
    print(f"max value (W): {m.max_value}")
    print(f"voxels: {m.voxel_count}")
    return 0


def _cmd_mce(args) -> int:
    vol = load_volume(args.volume)
    env = extract_environment(vol, args.seed, args.env)
    if not env.complete:
        raise BorderSeedError([args.seed], args.env)
    theta = mce_threshold(Histogram.from_values(env.values))
    print(f"theta*: {theta}")
    if args.theta_g is not None:
        print(f"offset: {theta - args.theta_g}")
    return 0


def _cmd_train(args) -> int:
    vol = load_volume(args.volume)
    positions = _load_seed_file(args.seeds)
    features = tuple(args.features.split(",")) if args.features else DEFAULT_FEATURES
    cfg = FeatureConfig(features, args.env, vol.meta.max_value)
    seeds = SeedSet(positions, env_size=args.env)
    grid = HyperGrid(k_max=args.kmax, eps_path=args.eps_path)
    model, report = train_from_seeds(
        vol,
        seeds,
        cfg,
        args.theta_g,
        grid=grid,
        folds=args.folds,
        fold_seed=args.fold_seed,
        worker_count=args.workers,
    )
    out = Path(args.out)
    model.save(out)
    cv_path = out.with_name(out.stem + ".cv.json")
    cv_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    print(f"model written to {out}")
    print(f"cv report written to {cv_path}")
    if report.degenerate_path:
        print("note: degenerate regularization path, weights are zero")
    else:
        _print_score_table(report)
        print(f"chosen lambda: {report.chosen_lambda:.6g}  mu: {report.chosen_mu}")
        print(f"cv score: {report.chosen_score:.6g}")
    print(f"beta: {[float(b) for b in model.beta]}")
    return 0


def _print_score_table(report) -> None:
    """Mean CV score per grid cell, lambda path down the rows, mu across."""
    mus = sorted({c.mu for c in report.cells})
    by_mu = {mu: [c for c in report.cells if c.mu == mu] for mu in mus}
    depth = max(len(v) for v in by_mu.values())
    print("cv mean score (rows: lambda path position, columns: mu)")
    print("  path " + "".join(f"  mu={mu:<9g}" for mu in mus))
    for k in range(depth):
        row = [f"  {k:>4d} "]
        for mu in mus:
            cells = by_mu[mu]
            if k < len(cells):
                c = cells[k]
                row.append("  failed     " if c.failed else f"  {c.mean_score:<11.5g}")
            else:
                row.append("  -          ")
        print("".join(row))


def _cmd_segment(args) -> int:
    vol = load_volume(args.volume)
    if args.model is not None:
        model = FaithModel.load(args.model)
        stats = segment(
            vol, model, args.out, slab_thickness=args.slab, workers=args.workers
        )
    else:
        stats = global_threshold_volume(vol, args.threshold, args.out, slab_thickness=args.slab)
    print(json.dumps(stats, indent=2))
    return 0


def _cmd_preview(args) -> int:
    from PIL import Image

    from .service import render_overlay

    vol = load_volume(args.volume)
    model = FaithModel.load(args.model)
    faith_mask, global_mask = decide_slice(vol, model, args.axis, args.index)
    base = vol.get_slice(args.axis, args.index)
    w = vol.meta.max_value
    gray = np.clip(np.rint(base.astype(np.float64) * (255.0 / w)), 0, 255).astype(np.uint8)
    base_img = Image.fromarray(gray, mode="L").convert("RGBA")
    overlay = Image.fromarray(render_overlay(faith_mask, global_mask), mode="RGBA")
    Image.alpha_composite(base_img, overlay).save(args.out)
    print(f"preview written to {args.out}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(
        args.volume, env_size=args.env, session_path=args.session, ui_dir=args.ui
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faith",
        description="Feature-adaptive interactive thresholding of 3D volumes",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="print volume metadata")
    p.add_argument("volume")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser("mce", help="optimal threshold of one seed environment")
    p.add_argument("volume")
    p.add_argument("--seed", type=_parse_triple, required=True, metavar="X,Y,Z")
    p.add_argument("--env", type=int, default=7, metavar="K")
    p.add_argument("--theta-g", type=float, default=None)
    p.set_defaults(func=_cmd_mce)

    p = sub.add_parser("train", help="train a model from a seed file")
    p.add_argument("volume")
    p.add_argument("--seeds", required=True, help="JSON file with [x,y,z] triples")
    p.add_argument("--theta-g", type=float, required=True)
    p.add_argument("--env", type=int, default=7, metavar="K")
    p.add_argument("--features", default=None, help="comma-separated feature names")
    p.add_argument("--kmax", type=int, default=16)
    p.add_argument("--eps-path", type=float, default=1e-3)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--fold-seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("segment", help="segment a volume with a model or plain threshold")
    p.add_argument("volume")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--threshold", type=float, help="plain global thresholding")
    p.add_argument("--out", required=True)
    p.add_argument("--slab", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("preview", help="write a PNG overlay of one slice")
    p.add_argument("volume")
    p.add_argument("--model", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), required=True)
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preview)

    p = sub.add_parser("serve", help="run the interactive HTTP service")
    p.add_argument("--volume", required=True)
    p.add_argument("--env", type=int, default=7, metavar="K")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=int(os.environ.get("FAITH_PORT", "8000")))
    p.add_argument("--session", default=None, help="session state file")
    p.add_argument("--ui", default=None, help="directory with the built viewer to serve at /ui")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (VolumeFormatError, BorderSeedError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
