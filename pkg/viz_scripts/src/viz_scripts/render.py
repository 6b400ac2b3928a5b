"""Particle scatter rendering: per-frame images plus one animation."""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib import animation  # noqa: E402
import numpy as np  # noqa: E402

from .frames import FrameSeries, load_series


def _speed(frame):
    return np.linalg.norm(frame.fluid_velocities, axis=1)


def _bounds(series: FrameSeries, pad=0.05):
    pts = np.concatenate(
        [np.concatenate([f.fluid_positions, f.solid_positions])
         for f in series.frames])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    return lo - pad * span, hi + pad * span


def _draw(ax, frame, lo, hi, vmax):
    ax.clear()
    if frame.n_fluid:
        ax.scatter(frame.fluid_positions[:, 0], frame.fluid_positions[:, 1],
                   c=_speed(frame), s=6, cmap="viridis", vmin=0.0,
                   vmax=max(vmax, 1e-12), rasterized=True)
    if frame.n_solid:
        ax.scatter(frame.solid_positions[:, 0], frame.solid_positions[:, 1],
                   c="firebrick", s=8, marker="s")
    ax.set_xlim(lo[0], hi[0])
    ax.set_ylim(lo[1], hi[1])
    ax.set_aspect("equal")
    ax.set_title(f"t = {frame.time:.3f} s")


def render_frames(run_dir, out_dir=None, fps=12, animation_name="run.gif"):
    """Render every frame of a run to PNG plus one GIF animation.

    Fluid particles are colored by speed (the frame files carry positions
    and velocities; volume data lives in the manifest). 3D runs are drawn
    as an xy projection. Returns (list of image paths, animation path).
    """
    series = load_series(run_dir)
    out_dir = run_dir if out_dir is None else out_dir
    os.makedirs(out_dir, exist_ok=True)
    lo, hi = _bounds(series)
    vmax = max((float(_speed(f).max()) for f in series.frames
                if f.n_fluid), default=1.0)

    images = []
    fig, ax = plt.subplots(figsize=(6, 6))
    for k, frame in enumerate(series.frames):
        _draw(ax, frame, lo, hi, vmax)
        path = os.path.join(out_dir, f"frame_{k:06d}.png")
        fig.savefig(path, dpi=90)
        images.append(path)

    anim_path = os.path.join(out_dir, animation_name)
    anim = animation.FuncAnimation(
        fig, lambda k: _draw(ax, series.frames[k], lo, hi, vmax),
        frames=len(series.frames))
    anim.save(anim_path, writer=animation.PillowWriter(fps=fps))
    plt.close(fig)
    return images, anim_path
