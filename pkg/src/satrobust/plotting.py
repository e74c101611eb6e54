"""SVG rendering of accuracy curves."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# fixed ids and no timestamp so reruns write identical files
matplotlib.rcParams["svg.hashsalt"] = "satrobust"


def plot_curves(curves, path, title: str = "") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for curve in curves:
        ax.plot(curve.epsilons * 255, curve.accuracies, marker="o", ms=3,
                label=curve.model)
    ax.set_xlabel("epsilon (x/255)")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
