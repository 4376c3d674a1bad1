"""
Optional SVG line charts for the result tables.

Figures are rendered into an in-memory buffer and written atomically. A fixed
hash salt and no date metadata keep reruns byte-identical.
"""
import io
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from results import atomic_write_text  # noqa: E402

logger = logging.getLogger(__name__)

SVG_HASH_SALT = "gsi-softimpute"


def _save_svg(fig, path):
    """Render a figure to SVG text and write it to path."""
    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    atomic_write_text(path, buf.getvalue())
    logger.info(f"Wrote chart {path}")
    return path


def plot_error_curve(frame, path):
    """
    Train and test MSE against the nuclear norm of the solution.

    Args:
        frame: error_curve table (nuclear_norm, train_mse, test_mse)
        path: output .svg file
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame["nuclear_norm"], frame["train_mse"], marker="o", label="Training error")
    if frame["test_mse"].notna().any():
        ax.plot(frame["nuclear_norm"], frame["test_mse"], marker="s", label="Test error")
    ax.set_xlabel("Nuclear norm")
    ax.set_ylabel("MSE")
    ax.set_title("Error vs nuclear norm")
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)


def plot_convergence(frame, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame["iteration"], frame["log10_relative_error"], marker=".")
    ax.set_xlabel("Iteration")
    ax.set_ylabel("log10 relative error")
    ax.set_title("Soft-impute convergence")
    fig.tight_layout()
    return _save_svg(fig, path)


def plot_group_metrics(summary, path):
    """One panel per metric: mean score against group size, a line per (method, k)."""
    metrics = ["precision", "recall", "f1"]
    fig, axs = plt.subplots(1, len(metrics), figsize=(15, 4))
    for ax, metric in zip(axs, metrics):
        for (method, k), rows in summary.groupby(["method", "k"], sort=True):
            rows = rows.sort_values("group_size")
            ax.plot(rows["group_size"], rows[metric], marker="o", label=f"{method} k={k}")
        ax.set_title(metric.capitalize())
        ax.set_xlabel("Group size")
        ax.set_ylim(bottom=0)
    axs[0].legend()
    fig.suptitle("Group recommendation quality")
    fig.tight_layout()
    return _save_svg(fig, path)


def plot_rank_table(frame, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for (dataset, method), rows in frame.groupby(["dataset", "method"], sort=True):
        rows = rows.dropna(subset=["rank"]).sort_values("lambda")
        ax.plot(rows["lambda"], rows["rank"].astype(float), marker="o", label=f"{dataset}/{method}")
    ax.set_xscale("log")
    ax.set_xlabel("lambda")
    ax.set_ylabel("Recovered rank")
    ax.set_title("Rank vs regularization")
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)
