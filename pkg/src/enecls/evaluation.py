"""Scoring and reporting: micro-averaged F, label histograms, corpus tables.

A predicted category counts as correct only on exact id equality with a
gold category.  Micro averaging pools true/false positive/negative counts
over all pages and labels before computing precision and recall; F is
their harmonic mean.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Set, TextIO

from .corpus import PageKey, StatsRow


@dataclass(frozen=True)
class Metrics:
    """Pooled counts and the scores derived from them."""

    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "Metrics":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(tp=tp, fp=fp, fn=fn, precision=precision, recall=recall, f1=f1)


def micro_f1(
    predictions: Mapping[PageKey, Set[str]],
    gold: Mapping[PageKey, Set[str]],
    *,
    count_extra: bool = False,
) -> Metrics:
    """Micro-averaged scores of predictions against gold labels.

    Gold defines the page universe: a gold page without a prediction
    contributes all its labels as false negatives.  Predictions for pages
    outside gold are ignored unless ``count_extra`` is set, in which case
    they all count as false positives.
    """
    tp = fp = fn = 0
    for key, gold_labels in gold.items():
        predicted = predictions.get(key, set())
        tp += len(predicted & gold_labels)
        fp += len(predicted - gold_labels)
        fn += len(gold_labels - predicted)
    if count_extra:
        for key, predicted in predictions.items():
            if key not in gold:
                fp += len(predicted)
    return Metrics.from_counts(tp, fp, fn)


def evaluate_by_language(
    predictions: Mapping[PageKey, Set[str]],
    gold: Mapping[PageKey, Set[str]],
    *,
    count_extra: bool = False,
) -> dict[str, Metrics]:
    """Per-language metrics plus the pooled ``"all"`` row."""
    languages = sorted({lang for lang, _ in gold} | {lang for lang, _ in predictions})
    out = {}
    for lang in languages:
        out[lang] = micro_f1(
            {k: v for k, v in predictions.items() if k[0] == lang},
            {k: v for k, v in gold.items() if k[0] == lang},
            count_extra=count_extra,
        )
    out["all"] = micro_f1(predictions, gold, count_extra=count_extra)
    return out


def label_histogram(
    gold: Mapping[PageKey, Set[str]], top: int | None = None
) -> list[tuple[str, int]]:
    """(label, count) pairs over all page assignments, most frequent first.

    Ties break by label id.  ``top`` cuts the list after the N most
    frequent labels.
    """
    counts: Counter[str] = Counter()
    for labels in gold.values():
        counts.update(labels)
    ordered = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    return ordered[:top] if top is not None else ordered


def format_histogram(rows: Sequence[tuple[str, int]]) -> str:
    lines = ["label\tcount"]
    lines.extend(f"{label}\t{count}" for label, count in rows)
    return "\n".join(lines) + "\n"


def format_stats_table(rows: Sequence[StatsRow]) -> str:
    """Aligned human-readable corpus statistics table."""
    header = ("Language", "Pages", "Linked", "Ratio")
    cells = [header]
    for row in rows:
        cells.append((row.language, f"{row.pages:,}", f"{row.linked:,}", f"{row.ratio:.1f}"))
    widths = [max(len(line[col]) for line in cells) for col in range(4)]
    lines = []
    for i, line in enumerate(cells):
        lines.append(
            "  ".join(
                line[0].ljust(widths[0]) if col == 0 else line[col].rjust(widths[col])
                for col, _ in enumerate(line)
            )
        )
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_stats_tsv(rows: Sequence[StatsRow]) -> str:
    lines = ["language\tpages\tlinked\tratio"]
    lines.extend(f"{r.language}\t{r.pages}\t{r.linked}\t{r.ratio:.1f}" for r in rows)
    return "\n".join(lines) + "\n"


def write_metrics_tsv(
    handle: TextIO, rows: Iterable[tuple[str, str, Metrics]]
) -> None:
    """Machine-readable scores: ``config<TAB>lang<TAB>precision<TAB>recall<TAB>f1``."""
    handle.write("config\tlang\tprecision\trecall\tf1\n")
    for config_name, lang, metrics in rows:
        handle.write(
            f"{config_name}\t{lang}\t{metrics.precision:.6f}\t{metrics.recall:.6f}\t{metrics.f1:.6f}\n"
        )


def format_metrics(metrics_by_language: Mapping[str, Metrics]) -> str:
    """Aligned per-language metrics table."""
    lines = [f"{'lang':<6} {'tp':>7} {'fp':>7} {'fn':>7} {'prec':>7} {'recall':>7} {'f1':>7}"]
    for lang, m in metrics_by_language.items():
        lines.append(
            f"{lang:<6} {m.tp:>7} {m.fp:>7} {m.fn:>7} {m.precision:>7.4f} {m.recall:>7.4f} {m.f1:>7.4f}"
        )
    return "\n".join(lines) + "\n"
