"""Diagnostic trend charts from run manifests."""

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .frames import read_manifest, require_columns

DEFAULT_COLUMNS = ("min_distance", "mean_J_dev", "newton_iters", "cg_iters")


def plot_diagnostics(manifests, out_path, columns=DEFAULT_COLUMNS,
                     labels=None):
    """Line charts of manifest diagnostic columns vs time.

    manifests: one path or a list of paths; several runs are overlaid per
    panel (scheme / parameter comparisons). Missing columns raise an error
    naming the column. Returns the written figure path.
    """
    if isinstance(manifests, (str, os.PathLike)):
        manifests = [manifests]
    if labels is None:
        labels = [os.path.basename(os.path.dirname(str(m)) or str(m))
                  for m in manifests]
    runs = []
    for path in manifests:
        _, cols = read_manifest(path)
        require_columns(cols, ("time",) + tuple(columns), source=str(path))
        runs.append(cols)

    fig, axes = plt.subplots(len(columns), 1, sharex=True,
                             figsize=(7, 2.2 * len(columns)), squeeze=False)
    for ax, col in zip(axes[:, 0], columns):
        for cols, label in zip(runs, labels):
            ax.plot(cols["time"], cols[col], marker=".", label=label)
        ax.set_ylabel(col)
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("time [s]")
    if len(runs) > 1:
        axes[0, 0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path
