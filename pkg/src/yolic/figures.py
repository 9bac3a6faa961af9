"""Report figures rendered to files next to the delimited outputs:
cell-layout sketches, training loss curves, metric bars, and prediction
overlays."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Polygon as MplPolygon
from matplotlib.patches import Rectangle as MplRectangle

from .cellgeom import CellConfig, Polygon, Rect
from .decode import CellPrediction
from .evalkit import MetricsReport
from .labelkit import class_color
from .yolicnet import TrainHistory

__all__ = [
    "plot_cell_layout",
    "plot_loss_curve",
    "plot_metrics",
    "plot_cost_breakdown",
    "plot_prediction_overlay",
]


def _cell_patch(shape, **kw):
    if isinstance(shape, Rect):
        return MplRectangle((shape.x0, shape.y0), shape.x1 - shape.x0, shape.y1 - shape.y0, **kw)
    return MplPolygon(np.array(shape.vertices), closed=True, **kw)


def _shape_center(shape):
    if isinstance(shape, Rect):
        return (shape.x0 + shape.x1) / 2, (shape.y0 + shape.y1) / 2
    pts = np.array(shape.vertices)
    return float(pts[:, 0].mean()), float(pts[:, 1].mean())


def plot_cell_layout(cfg: CellConfig, path, image: np.ndarray | None = None) -> None:
    """Draw every cell outline with its canonical index badge."""
    fig, ax = plt.subplots(figsize=(7, 7))
    if image is not None:
        ax.imshow(image, extent=(0, 1, 1, 0))
    show_badges = cfg.n_cells <= 160
    for i, shape in enumerate(cfg.cells):
        ax.add_patch(_cell_patch(shape, fill=False, edgecolor="tab:blue", linewidth=0.8))
        if show_badges:
            cx, cy = _shape_center(shape)
            ax.text(cx, cy, str(i), ha="center", va="center", fontsize=6, color="tab:red")
    ax.set_xlim(0, 1)
    ax.set_ylim(1, 0)  # image convention: y grows downward
    ax.set_aspect("equal")
    ax.set_title(f"{cfg.name}: {cfg.n_cells} cells, {cfg.n_classes} classes "
                 f"(C = {cfg.n_outputs})")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_loss_curve(history: TrainHistory, path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    epochs = np.arange(len(history.epoch_losses))
    ax.plot(epochs, history.epoch_losses, lw=1.5, color="tab:blue", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean BCE loss")
    ax.set_yscale("log")
    ax2 = ax.twinx()
    ax2.plot(epochs, history.epoch_lrs, lw=1.0, ls="--", color="tab:orange", label="lr")
    ax2.set_ylabel("learning rate")
    ax2.set_yscale("log")
    ax.set_title(f"training loss over {len(epochs)} epochs ({history.steps} steps)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_metrics(report: MetricsReport, path) -> None:
    """Grouped precision/recall/F1 bars per class plus the All row."""
    rows = [*report.per_class, report.all_row, *report.binary, report.binary_all]
    names = [r.name for r in report.per_class] + ["All"] + \
        [f"bin:{r.name}" for r in report.binary] + ["bin:All"]
    x = np.arange(len(rows))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(7, 0.8 * len(rows)), 4.5))
    ax.bar(x - width, [r.precision for r in rows], width, label="precision")
    ax.bar(x, [r.recall for r in rows], width, label="recall")
    ax.bar(x + width, [r.f1 for r in rows], width, label="f1")
    ax.set_xticks(x, names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right")
    ax.set_title(f"per-class and binary metrics over {report.n_images} images")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cost_breakdown(entries, path, title="per-block cost") -> None:
    """Aggregate LayerCost entries by top-level block and chart both
    parameter and FLOP shares."""
    blocks: dict[str, list[int]] = {}
    for e in entries:
        top = e.name.split(".")[0]
        acc = blocks.setdefault(top, [0, 0])
        acc[0] += e.params
        acc[1] += e.flops
    names = list(blocks)
    params = [blocks[n][0] / 1e6 for n in names]
    flops = [blocks[n][1] / 1e9 for n in names]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.bar(names, params, color="tab:blue")
    ax1.set_ylabel("params (M)")
    ax1.tick_params(axis="x", rotation=45)
    ax2.bar(names, flops, color="tab:orange")
    ax2.set_ylabel("FLOPs (G)")
    ax2.tick_params(axis="x", rotation=45)
    fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_prediction_overlay(image: np.ndarray, cfg: CellConfig,
                            preds: list[CellPrediction], path) -> None:
    """Paint decided classes over the image; background cells stay
    unfilled, low-confidence background cells get a dotted outline."""
    fig, ax = plt.subplots(figsize=(7, 7))
    ax.imshow(image, extent=(0, 1, 1, 0))
    for shape, pred in zip(cfg.cells, preds):
        if pred.decided_classes:
            color = class_color(pred.decided_classes[0])
            ax.add_patch(_cell_patch(shape, facecolor=(*color, 0.35), edgecolor=color, linewidth=1.2))
        elif pred.low_confidence:
            ax.add_patch(_cell_patch(shape, fill=False, edgecolor="gray",
                                     linestyle=":", linewidth=0.9))
        else:
            ax.add_patch(_cell_patch(shape, fill=False, edgecolor="white",
                                     linewidth=0.5, alpha=0.6))
    ax.set_xlim(0, 1)
    ax.set_ylim(1, 0)
    ax.set_aspect("equal")
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
