"""Matplotlib figures for the benchmark report."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import REFERENCE_FPS, WarpStrategy  # noqa: E402

LABELS = {"global_affine": "Global affine", "local_affine": "Local affine", "dense_flow": "Dense flow"}
COLORS = {"global_affine": "#4c72b0", "local_affine": "#dd8452", "dense_flow": "#55a868"}


def plot_bench(report, path, threads: int = 1):
    """Two panels per report: parameter count (log scale) and measured FPS with IQR bars."""
    grids = sorted({e.grid for e in report.entries})
    strategies = [s.value for s in WarpStrategy]
    width = 0.8 / len(grids)
    x = np.arange(len(strategies))

    fig, (ax_dof, ax_fps) = plt.subplots(1, 2, figsize=(10, 4))
    for gi, g in enumerate(grids):
        by = {e.strategy: e for e in report.entries if e.grid == g and e.threads == threads}
        off = (gi - (len(grids) - 1) / 2) * width
        dof = [by[s].dof if s in by else np.nan for s in strategies]
        fps = [by[s].fps_median if s in by else np.nan for s in strategies]
        iqr = [by[s].fps_iqr / 2 if s in by else 0.0 for s in strategies]
        ax_dof.bar(x + off, dof, width, color=[COLORS[s] for s in strategies], alpha=0.5 + 0.5 * (gi + 1) / len(grids))
        ax_fps.bar(x + off, fps, width, yerr=iqr, capsize=3, color=[COLORS[s] for s in strategies],
                   alpha=0.5 + 0.5 * (gi + 1) / len(grids), label=f"{g}x{g}")
    ax_dof.set_yscale("log")
    ax_dof.set_ylabel("degrees of freedom")
    ax_fps.set_ylabel("kernel FPS (median)")
    for ax in (ax_dof, ax_fps):
        ax.set_xticks(x)
        ax.set_xticklabels([LABELS[s] for s in strategies])
    ref = ", ".join(f"{LABELS[s]} {REFERENCE_FPS[s]:g}" for s in strategies)
    ax_fps.set_title(f"reference FPS (full network): {ref}", fontsize=8)
    if len(grids) > 1:
        ax_fps.legend(title="map size", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
