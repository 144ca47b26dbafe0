"""Matplotlib renderings of the report outputs.

Figures are written straight to files (Agg backend, no display), alongside
the delimited data each report emits.
"""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .ablation import AblationReport


def save_histogram_figure(
    rows: Sequence[tuple[str, int]], path: str, title: str = "Most frequent labels"
) -> None:
    """Bar chart of (label, count) pairs, largest first."""
    labels = [label for label, _ in rows]
    counts = [count for _, count in rows]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.6 * len(rows) + 2.0), 4.0))
    bars = ax.bar(range(len(rows)), counts, color="#4878d0")
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("count")
    ax.set_title(title)
    ax.bar_label(bars, fmt="%g", fontsize=7, rotation=90, padding=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_ablation_figure(report: AblationReport, path: str) -> None:
    """Per-language F1 of each ablation configuration, one marker series each."""
    languages = sorted({lang for row in report.rows for lang in row.per_language})
    fig, ax = plt.subplots(figsize=(max(6.0, 0.8 * len(languages) + 3.0), 4.5))
    markers = ("o", "s", "^", "d")
    for row, marker in zip(report.rows, markers):
        if row.error is not None:
            continue
        scores = [row.per_language[lang].f1 for lang in languages]
        ax.plot(range(len(languages)), scores, marker=marker, label=row.config)
    ax.set_xticks(range(len(languages)))
    ax.set_xticklabels(languages)
    ax.set_xlabel("language")
    ax.set_ylabel("micro F1")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title("Ablation: components added one at a time")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
