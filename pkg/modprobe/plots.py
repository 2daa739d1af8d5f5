"""SVG renderings of percentile histograms and the log-scale p-value grid."""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .cluster import METHODS  # noqa: E402
from .stats import METRICS, ReportEntry, StatsReport, attainable_percentiles  # noqa: E402

plt.rcParams["svg.hashsalt"] = "modprobe"
SVG_METADATA = {"Date": None}


def log10_label(p: float) -> str:
    """Rounded log10 of a p value, e.g. 1e-17 -> '-17'."""
    exponent = round(math.log10(max(p, 1e-300)))
    return str(int(exponent)) if exponent else "0"


def _save(fig, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=SVG_METADATA)
    plt.close(fig)


def percentile_histogram(entry: ReportEntry, path: str | Path) -> None:
    """One bar per attainable centered percentile value."""
    grid = attainable_percentiles((len(entry.percentile_counts) - 1) // 2)
    fig, ax = plt.subplots(figsize=(6, 3))
    width = 0.9 * float(grid[1] - grid[0]) if len(grid) > 1 else 0.02
    ax.bar(grid, entry.percentile_counts, width=width, color="#4477aa")
    ax.set_xlim(0.0, 1.0)
    ax.set_xlabel("centered percentile")
    ax.set_ylabel("subclusters")
    ax.set_title(f"{entry.network} {entry.method} {entry.metric} (p={entry.p_value:.2g})")
    fig.tight_layout()
    _save(fig, path)


def pvalue_grid(report: StatsReport, path: str | Path) -> None:
    """Methods x metrics table of rounded log10 p values, BH-significant cells shaded."""
    fig, ax = plt.subplots(figsize=(7, 3))
    shade = np.zeros((len(METHODS), len(METRICS)))
    for row, method in enumerate(METHODS):
        for col, metric in enumerate(METRICS):
            entry = report.entry(method, metric)
            label = "n/a" if entry is None else log10_label(entry.p_value)
            if entry is not None and entry.bh_significant:
                shade[row, col] = 1.0
            ax.text(col, row, label, ha="center", va="center", fontsize=10)
    ax.imshow(shade, cmap="Greys", vmin=0.0, vmax=3.0, aspect="auto")
    ax.set_xticks(range(len(METRICS)), METRICS, rotation=20)
    ax.set_yticks(range(len(METHODS)), METHODS)
    ax.set_title("log10 p (shaded: BH significant)")
    fig.tight_layout()
    _save(fig, path)
