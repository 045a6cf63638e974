"""Matplotlib figures rendered next to the delimited reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_loss_figure(rows: list, path) -> None:
    """Loss components over training steps (log scale)."""
    steps = [r.step for r in rows]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(steps, [r.loss_total for r in rows], label="total", lw=1.2)
    ax.plot(steps, [r.loss_rec for r in rows], label="reconstruction", lw=0.8, alpha=0.8)
    ax.plot(steps, [r.loss_perc for r in rows], label="perceptual", lw=0.8, alpha=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="best")
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_figure(rows: list, path) -> None:
    """Median colorize latency against image size."""
    sizes = [r.size for r in rows]
    medians = [r.median_s for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(sizes, medians, "o-")
    ax.set_xlabel("image side (px)")
    ax.set_ylabel("median seconds per colorize")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_title("CPU colorization latency")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
