"""Command-line entry points for rendering and diagnostics plotting."""

import argparse
import sys

from .plots import DEFAULT_COLUMNS, plot_diagnostics
from .render import render_frames


def render_main(argv=None):
    ap = argparse.ArgumentParser(
        description="Render a simulation run to images and an animation.")
    ap.add_argument("run_dir", help="directory with frame_*.bin + manifest")
    ap.add_argument("--out", default=None, help="output directory "
                    "(default: the run directory)")
    ap.add_argument("--fps", type=int, default=12)
    try:
        args = ap.parse_args(argv)
        images, anim = render_frames(args.run_dir, args.out, fps=args.fps)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(images)} images and {anim}")
    return 0


def plot_main(argv=None):
    ap = argparse.ArgumentParser(
        description="Plot manifest diagnostics; several runs are overlaid.")
    ap.add_argument("manifests", nargs="+", help="manifest.csv paths")
    ap.add_argument("--out", default="diagnostics.png")
    ap.add_argument("--columns", default=",".join(DEFAULT_COLUMNS),
                    help="comma-separated manifest columns")
    try:
        args = ap.parse_args(argv)
        path = plot_diagnostics(args.manifests, args.out,
                                columns=tuple(args.columns.split(",")))
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0
