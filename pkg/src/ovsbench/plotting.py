"""Report figures written next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# No timestamps or version strings in the PNG, so figures are byte-stable across runs.
_PNG_METADATA = {"Software": None}

STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.5,
    "savefig.dpi": 150,
}


def plot_sweep(result, path, title="mIoU vs. number of inference categories"):
    counts = [p[0] for p in result.points]
    values = [100.0 * p[1] for p in result.points]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(counts, values, marker="o")
        ax.set_xlabel("number of categories")
        ax.set_ylabel("mIoU (%)")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_METADATA)
        plt.close(fig)


def plot_similarity_histogram(scores, path, bins=20, title="max similarity to training vocabulary"):
    values = np.array([s.max_train_similarity for s in scores], dtype=np.float64)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.hist(values, bins=bins, range=(min(-0.0, values.min(initial=0.0)), 1.0), edgecolor="white")
        if values.size:
            ax.axvline(float(np.median(values)), color="k", linestyle="--", linewidth=1, label="median")
            ax.legend(frameon=False)
        ax.set_xlabel("cosine similarity")
        ax.set_ylabel("categories")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(path, metadata=_PNG_METADATA)
        plt.close(fig)
