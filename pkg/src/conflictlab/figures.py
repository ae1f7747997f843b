"""Static figure rendering for report outputs.

Each function writes one PNG next to the delimited report data. Rendering
is optional everywhere and kept separate from the numeric pipeline.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import PowerLawFit, RocResult

_DPI = 150


def render_roc(curves: dict[str, RocResult], path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 4.5))
    for name, roc in curves.items():
        fpr = [p[1] * 100.0 for p in roc.points]
        tpr = [p[2] * 100.0 for p in roc.points]
        ax.plot(fpr, tpr, marker=".", markersize=3, label=f"{name} (AUC {roc.auc:.3f})")
        ax.plot(*[v * 100.0 for v in roc.optimal_point], "o", color=ax.lines[-1].get_color())
    ax.plot([0, 100], [0, 100], ls="--", lw=0.8, color="grey")
    ax.set_xlabel("false positive rate (%)")
    ax.set_ylabel("true positive rate (%)")
    ax.set_xlim(-2, 102)
    ax.set_ylim(-2, 102)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_training_curves(rows: list[dict], path: str | Path) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(8.5, 3.6))
    epochs = [r["epoch"] for r in rows]
    axes[0].plot(epochs, [r["train_loss"] for r in rows], label="train loss")
    axes[0].plot(epochs, [r["val_loss"] for r in rows], label="validation loss")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss (nats/sample)")
    axes[0].legend(fontsize=8)
    axes[1].plot(epochs, [r["val_nll"] for r in rows], color="tab:red")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylabel("validation NLL (nats/sample)")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_intensity_histogram(
    values_by_label: dict[str, np.ndarray],
    fits: dict[str, PowerLawFit],
    path: str | Path,
    bins_per_decade: int = 20,
) -> None:
    """Log-log frequency plot with the fitted trend lines."""
    from .evaluation import log_bin_edges

    fig, ax = plt.subplots(figsize=(5.5, 4.2))
    for label, values in values_by_label.items():
        values = np.asarray(values, dtype=float)
        values = values[np.isfinite(values) & (values > 0)]
        if len(values) == 0:
            continue
        edges = log_bin_edges(values, bins_per_decade)
        counts, _ = np.histogram(values, bins=edges)
        centres = np.sqrt(edges[:-1] * edges[1:])
        widths = np.diff(edges)
        mask = counts > 0
        ax.scatter(centres[mask], counts[mask] / widths[mask], s=12, label=label)
        fit = fits.get(label)
        if fit is not None:
            xs = np.array([centres[mask].min(), centres[mask].max()])
            ax.plot(xs, 10 ** (fit.intercept + fit.slope * np.log10(xs)), ls="--", lw=1.0,
                    color=ax.collections[-1].get_facecolor()[0])
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("value")
    ax.set_ylabel("frequency density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def render_heatmap(
    x_lat: np.ndarray,
    y_long: np.ndarray,
    grid: np.ndarray,
    path: str | Path,
    label: str,
    ego_length: float | None = None,
    ego_width: float | None = None,
    log_scale: bool = False,
) -> None:
    """Ego-centred field over lateral (x) and longitudinal (y) offsets."""
    fig, ax = plt.subplots(figsize=(4.6, 6.0))
    data = np.log10(np.maximum(grid, 1e-12)) if log_scale else grid
    mesh = ax.pcolormesh(x_lat, y_long, data, shading="auto", cmap="inferno")
    fig.colorbar(mesh, ax=ax, label=(f"log10 {label}" if log_scale else label))
    if ego_length and ego_width:
        ax.add_patch(
            plt.Rectangle(
                (-ego_width / 2.0, -ego_length / 2.0), ego_width, ego_length,
                fill=False, edgecolor="cyan", lw=1.2,
            )
        )
    ax.set_xlabel("lateral offset (m)")
    ax.set_ylabel("longitudinal offset (m)")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
