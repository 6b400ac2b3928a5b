"""Batch command-line interface.

Subcommands:
    simulate <scene> --out <dir> [--frames N] [--scheme joint|ts|tscp2|tscp3]
    diagnose <scene>
    info <frame-file>
"""

import argparse
import sys

import numpy as np

from .integrator import SCHEMES, IntegratorError
from .scene import (SceneError, diagnose, format_report, load_scene,
                    read_frame, run)


def _cmd_simulate(args):
    cfg = load_scene(args.scene)

    def progress(k, total):
        print(f"frame {k}/{total}", flush=True)

    out = run(cfg, out_dir=args.out, frames=args.frames, scheme=args.scheme,
              progress=progress)
    print(f"wrote frames and manifest to {out}")
    return 0


def _cmd_diagnose(args):
    cfg = load_scene(args.scene)
    report = diagnose(cfg)
    print(format_report(report))
    return 0 if all(p for _, p, _ in report) else 1


def _cmd_info(args):
    fr = read_frame(args.frame)
    print(f"version:   {fr['version']}")
    print(f"dim:       {fr['dim']}")
    print(f"n_fluid:   {fr['n_fluid']}")
    print(f"n_solid:   {fr['n_solid']}")
    print(f"time:      {fr['time']:.6f}")
    for key in ("fluid_positions", "fluid_velocities", "solid_positions"):
        a = fr[key]
        if len(a):
            print(f"{key}: min {np.min(a, axis=0)} max {np.max(a, axis=0)}")
        else:
            print(f"{key}: empty")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="lagcoup",
        description="Lagrangian solid-fluid coupling simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scene and export frames")
    p.add_argument("scene")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--scheme", choices=SCHEMES, default=None)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("diagnose", help="run the verification suite on a scene")
    p.add_argument("scene")
    p.set_defaults(fn=_cmd_diagnose)

    p = sub.add_parser("info", help="print a frame file header")
    p.add_argument("frame")
    p.set_defaults(fn=_cmd_info)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (SceneError, IntegratorError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
