"""Matplotlib figures rendered next to the delimited report output."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .scoring import MetricReport


def save_metric_figure(report: MetricReport, path: str | Path, title: str = "run") -> None:
    """Grouped bar chart of F1/EM per split plus the weighted average."""
    labels = [
        f"simple (n={report.simple.count})",
        f"hard (n={report.hard.count})",
        f"avg (n={report.avg.count})",
    ]
    f1_vals = [report.simple.f1, report.hard.f1, report.avg.f1]
    em_vals = [report.simple.em, report.hard.em, report.avg.em]
    x = range(len(labels))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    bars_f1 = ax.bar([i - width / 2 for i in x], f1_vals, width, label="F1")
    bars_em = ax.bar([i + width / 2 for i in x], em_vals, width, label="EM")
    for bars in (bars_f1, bars_em):
        ax.bar_label(bars, fmt="%.2f", fontsize=8)
    ax.set_xticks(list(x), labels)
    ax.set_ylim(0, 105)
    ax.set_ylabel("percent")
    ax.set_title(title)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_figure(history: list[dict], path: str | Path, title: str = "toy training") -> None:
    """Reward and KL curves over updates from the training log records."""
    updates = [rec["update"] for rec in history]
    rewards = [rec["mean_reward"] for rec in history]
    kls = [rec["mean_kl"] for rec in history]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 5.2), sharex=True)
    ax1.plot(updates, rewards, lw=1.2)
    ax1.set_ylabel("mean reward")
    ax1.set_title(title)
    ax2.plot(updates, kls, lw=1.2, color="tab:orange")
    ax2.set_ylabel("mean KL")
    ax2.set_xlabel("update")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
