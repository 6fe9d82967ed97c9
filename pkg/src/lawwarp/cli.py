"""Command-line interface.

Exit codes: 0 success, 1 check failure, 2 usage or parse error, 3 degenerate input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .bench import run_bench, write_report
from .flowviz import render_channels
from .frontalize import (DegenerateInputError, apply_similarity, invert_similarity,
                         solve_similarity)
from .gradients import (DEFAULT_STEPS, REL_TOL, LinearObjective, border_window,
                        finite_difference_check)
from .grid import CoarseGridConfig, compute_field_on_coarse_grid, upscale_field, warp_feature_map
from .warp import PARAM_NAMES, WarpSpec

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_DEGENERATE = 0, 1, 2, 3

DEFAULT_GRADCHECK = {
    "channels": 4,
    "keypoints": 8,
    "height": 240,
    "width": 240,
    "downscale_factor": 4,
    "steps": list(DEFAULT_STEPS),
    "rel_tol": REL_TOL,
}


class UsageError(Exception):
    pass


def _grid_size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    return h, w


def field_for(spec: WarpSpec, h: int, w: int, factor: int) -> np.ndarray:
    """The ``(C, h, w, 2)`` field written by ``lawwarp field``."""
    cfg = CoarseGridConfig(factor, h, w)
    return upscale_field(compute_field_on_coarse_grid(spec, cfg), h, w)


def cmd_field(args):
    spec = io.read_spec(args.spec)
    h, w = args.grid
    field = field_for(spec, h, w, args.coarse)
    io.write_tensor(args.out, field)
    print(f"wrote field {tuple(field.shape)} to {args.out}")
    return EXIT_OK


def cmd_warp(args):
    spec = io.read_spec(args.spec)
    png = io.is_png(args.input)
    fmap = io.read_png(args.input) if png else io.read_tensor(args.input)
    if fmap.ndim == 2:
        fmap = fmap[None]
    if fmap.ndim != 3:
        raise UsageError(f"input must be a (C, H, W) tensor, got shape {fmap.shape}")
    if fmap.shape[0] != spec.channels:
        raise UsageError(f"spec has {spec.channels} channels but input has {fmap.shape[0]}")
    out = warp_feature_map(fmap, spec, args.coarse)
    if png:
        io.write_png(args.out, out)
    else:
        io.write_tensor(args.out, out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_viz(args):
    field = io.read_tensor(args.field)
    if field.ndim not in (3, 4) or field.shape[-1] != 2:
        raise UsageError(f"field tensor must have trailing dim 2 and shape (C, H, W, 2), got {field.shape}")
    if args.channel is not None:
        if field.ndim == 3 or not 0 <= args.channel < field.shape[0]:
            raise UsageError(f"channel {args.channel} out of range")
        field = field[args.channel]
    rgb, vmax = render_channels(field, args.max)
    io.write_rgb_png(args.out, rgb)
    print(f"max magnitude {vmax!r}")
    return EXIT_OK


def cmd_frontalize(args):
    img = io.read_png(args.image)
    m = io.read_landmarks(args.landmarks)
    tmp = io.read_landmarks(args.template or io.template_path())
    if len(m) != len(tmp):
        raise UsageError(f"{len(m)} landmarks but the template has {len(tmp)}")
    T = solve_similarity(m, tmp)
    io.write_png(args.out, apply_similarity(img, T))
    if args.emit_transform:
        Path(args.emit_transform).write_text(io.format_transform(T))
    print(io.format_transform(T), end="")
    return EXIT_OK


def cmd_restore(args):
    img = io.read_png(args.image)
    T = io.parse_transform(Path(args.transform).read_text())
    io.write_png(args.out, apply_similarity(img, invert_similarity(T)))
    print(f"wrote {args.out}")
    return EXIT_OK


def gradcheck_inputs(config: dict, seed: int):
    """Seeded smooth map, random spec and border-windowed linear objective."""
    rng = np.random.default_rng(seed)
    c, n, h, w = (int(config[k]) for k in ("channels", "keypoints", "height", "width"))
    y, x = np.mgrid[0:h, 0:w]
    y, x = y / (h - 1), x / (w - 1)
    freqs = rng.uniform(0.5, 2.0, (c, 3))
    fmap = np.stack([np.sin(2 * np.pi * (a * x + b * y) + ph) for a, b, ph in freqs]).astype(np.float32)
    spec = WarpSpec.random(rng, c, n)
    weights = border_window(h, w) * rng.uniform(0.5, 1.5, (c, h, w))
    return fmap, spec, LinearObjective(weights)


def load_gradcheck_config(path) -> dict:
    config = dict(DEFAULT_GRADCHECK)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise io.FormatError(f"{path}: {exc}") from exc
        unknown = set(user) - set(config)
        if unknown:
            raise io.FormatError(f"unknown gradcheck config keys: {sorted(unknown)}")
        config.update(user)
    return config


def run_gradcheck(config: dict, seed: int, flip_sign=None):
    fmap, spec, objective = gradcheck_inputs(config, seed)
    cfg = CoarseGridConfig(int(config["downscale_factor"]), int(config["height"]), int(config["width"]))
    return finite_difference_check(fmap, spec, cfg, objective, config["steps"],
                                   rel_tol=float(config["rel_tol"]), flip_sign=flip_sign)


def cmd_gradcheck(args):
    config = load_gradcheck_config(args.config)
    report = run_gradcheck(config, args.seed, args.inject_sign_error)
    doc = {"seed": args.seed, "config": config, **report.to_dict()}
    text = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    print(report.format_table(), file=sys.stderr)
    if not report.passed:
        bad = [n for n in PARAM_NAMES if report.max_rel_error[n] > report.rel_tol]
        print(f"gradient check failed for: {', '.join(bad)}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_bench(args):
    threads = (1, 0) if args.parallel else (1,)
    report = run_bench(args.grid or [240], args.channels, args.keypoints, args.reps, warmup=args.warmup,
                       downscale_factor=args.coarse, threads=threads, seed=args.seed)
    paths = write_report(report, args.out_dir, figure=not args.no_figure)
    print(report.format_table())
    for g in sorted({e.grid for e in report.entries}):
        order = report.ordering(g)
        print(f"grid {g}: observed ordering {' > '.join(order)}; "
              f"reference global_affine > local_affine > dense_flow "
              f"({'matches' if report.matches_reference_ordering(g) else 'differs'})")
    for kind, p in paths.items():
        print(f"{kind}: {p}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lawwarp", description="Local affine warping of feature maps.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("field", help="evaluate a warp spec's displacement field")
    p.add_argument("spec", help="warp spec (JSON)")
    p.add_argument("--grid", type=_grid_size, required=True, metavar="HxW", help="output field resolution")
    p.add_argument("--coarse", type=int, default=1, metavar="F", help="downscale factor of the evaluation grid")
    p.add_argument("--out", required=True, help="output tensor file, shape (C, H, W, 2)")
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("warp", help="warp a PNG image or a (C, H, W) tensor")
    p.add_argument("input", help="PNG or tensor file")
    p.add_argument("spec", help="warp spec (JSON)")
    p.add_argument("--coarse", type=int, default=1, metavar="F", help="downscale factor of the field grid")
    p.add_argument("--out", required=True, help="output file, same format as the input")
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("viz", help="colour-wheel PNG of a field tensor")
    p.add_argument("field", help="tensor of shape (C, H, W, 2) or (H, W, 2)")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--channel", type=int, help="render one channel only (default: all, side by side)")
    p.add_argument("--max", type=float, help="magnitude mapped to full saturation (default: field maximum)")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("frontalize", help="align an image to a landmark template")
    p.add_argument("image", help="PNG image")
    p.add_argument("landmarks", help="landmark file for the image (pixels)")
    p.add_argument("template", nargs="?", help="template landmark file (default: bundled 5-point template)")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--emit-transform", metavar="FILE", help="also write the solved s, theta, tx, ty")
    p.set_defaults(func=cmd_frontalize)

    p = sub.add_parser("restore", help="undo a frontalization with its transform file")
    p.add_argument("image", help="PNG image in the frontal frame")
    p.add_argument("transform", help="transform file written by --emit-transform")
    p.add_argument("--out", required=True, help="output PNG")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("gradcheck", help="finite-difference check of the analytic warp gradient")
    p.add_argument("--seed", type=int, default=0, help="seed for the random map and spec")
    p.add_argument("--config", help="JSON overriding " + ", ".join(DEFAULT_GRADCHECK))
    p.add_argument("--out", help="also write the JSON report here")
    p.add_argument("--inject-sign-error", choices=PARAM_NAMES, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="dof counts and warp throughput per strategy")
    p.add_argument("--grid", type=int, action="append", metavar="S", help="square map size (repeatable, default 240)")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--keypoints", type=int, default=8)
    p.add_argument("--coarse", type=int, default=4, metavar="F", help="downscale factor for the keypoint strategies")
    p.add_argument("--reps", type=int, default=20, help="timed repetitions (median is reported)")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", action="store_true", help="also time with LAWWARP_THREADS workers")
    p.add_argument("--no-figure", action="store_true", help="skip bench.png")
    p.add_argument("--out-dir", default="bench-report", help="directory for bench.json, bench.csv, bench.png")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DegenerateInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
