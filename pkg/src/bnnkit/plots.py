"""Figure rendering for the CLI report paths (written next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .encoders import fixed_ramp

_CHANNEL_COLORS = ["red", "green", "blue", "magenta", "cyan", "orange"]


def plot_encoding_curves(thresholds: np.ndarray, nb: int, out_path,
                         title: str = "Encoding curves") -> None:
    """Bit-count level (1..M) versus threshold, one curve per channel,
    with the fixed linear ramp in black for reference."""
    thresholds = np.atleast_2d(thresholds)
    c, m = thresholds.shape
    levels = np.arange(1, m + 1)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    try:
        ramp = fixed_ramp(m, nb)
        ax.step(ramp, levels, where="post", color="black",
                label="linear ramp")
    except ValueError:
        pass
    for ch in range(c):
        ax.step(thresholds[ch], levels, where="post",
                color=_CHANNEL_COLORS[ch % len(_CHANNEL_COLORS)],
                label=f"channel {ch}")
    ax.set_xlabel("threshold")
    ax.set_ylabel("bit-count level")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def plot_tradeoff(rows: list[dict], out_path) -> None:
    """Two panels: accuracy vs model size (bits) and accuracy vs BOPs."""
    sizes = [r["size_bits"] for r in rows]
    bops = [r["bops"] for r in rows]
    accs = [r["accuracy"] for r in rows]
    labels = [str(r["stage"]) for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
    for ax, xs, name in ((axes[0], sizes, "model size [bits]"),
                         (axes[1], bops, "BOPs")):
        ax.plot(xs, accs, "o-")
        for x, y, lab in zip(xs, accs, labels):
            ax.annotate(lab, (x, y), textcoords="offset points",
                        xytext=(4, 4), fontsize=8)
        ax.set_xlabel(name)
        ax.set_ylabel("accuracy [%]")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
