"""Budget/R^2 figure rendered from the ``curves.csv`` plot data."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench_io import read_curves  # noqa: E402


def plot_curves(curves_path, out_path, title: Optional[str] = None,
                reference: Optional[float] = None) -> Path:
    """Mean target R^2 (with one-std band) against consumed budget fraction."""
    series = defaultdict(list)
    for row in read_curves(curves_path):
        series[row["policy"]].append(row)
    fig, ax = plt.subplots(figsize=(5.5, 3.8), dpi=120)
    for policy, rows in series.items():
        rows.sort(key=lambda r: r["fraction"])
        x = [100.0 * r["fraction"] for r in rows]
        mean = [r["mean_r2"] for r in rows]
        std = [r["std_r2"] for r in rows]
        ax.plot(x, mean, marker="o", label=policy)
        ax.fill_between(x, [m - s for m, s in zip(mean, std)], [m + s for m, s in zip(mean, std)],
                        alpha=0.15)
    if reference is not None:
        ax.axhline(reference, color="black", linestyle="--", linewidth=1, label="all data")
    ax.set_xlabel("budget used (% of pool cost)")
    ax.set_ylabel("target R$^2$")
    ax.set_ylim(-1.05, 1.05)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8, loc="lower right")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, metadata={"Software": None})
    plt.close(fig)
    return out_path
