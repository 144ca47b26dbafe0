"""Command-line entry point for the whole three-stage workflow.

One subcommand per pipeline step: ``stats``, ``histogram``, ``train``,
``finetune``, ``predict``, ``vote``, ``eval``, ``ablate``, ``gradcheck``.
Settings merge from defaults, then an optional JSON config file, then
command-line flags (highest precedence).  Logs go to stderr; data goes to
files or stdout only.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from typing import Iterable, Iterator, TextIO

from . import __version__
from .corpus import (
    Page,
    ReadCounters,
    corpus_stats,
    load_gold_labels,
    load_links,
    read_pages,
)
from .encoder import HVEC_VERSION
from .errors import ConfigError, DataError, NumericError, UsageError
from .evaluation import (
    evaluate_by_language,
    format_histogram,
    format_metrics,
    format_stats_table,
    format_stats_tsv,
    label_histogram,
    write_metrics_tsv,
)
from .hmcn import CHECKPOINT_VERSION, load_checkpoint, save_checkpoint
from .pipeline import (
    PredictCounters,
    TrainConfig,
    finetune,
    gradient_check,
    predict_batch,
    read_predictions,
    train_multilingual,
    write_predictions,
)
from .taxonomy import load_taxonomy
from .voting import VotingStats, apply_voting

log = logging.getLogger(__name__)

_TRAIN_FIELDS = {field.name for field in dataclasses.fields(TrainConfig)}
_PATH_KEYS = ("taxonomy", "pages", "gold", "links", "pred", "base", "checkpoint", "out", "plot")
_MODE_KEYS = (
    "strict_vote",
    "advisory",
    "score_extra",
    "workers",
    "skip_errors",
    "save_optimizer",
    "language",
    "trials",
    "top",
    "name",
    "eval_fraction",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1 here
        raise UsageError(message)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        print(f"run '{parser.prog} --help' for usage", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args) or 0
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def _build_parser() -> _Parser:
    parser = _Parser(prog="enecls", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"enecls {__version__}"
            f" (checkpoint format {CHECKPOINT_VERSION}, vector format {HVEC_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def add(name: str, help_text: str, func) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (flags override its keys)")
        p.add_argument("--quiet", "-q", action="store_true", help="only warnings on stderr")
        p.set_defaults(func=func)
        return p

    p = add("stats", "per-language corpus statistics table", cmd_stats)
    p.add_argument("--pages", help="directory of per-language page files (<lang>.jsonl)")
    p.add_argument("--links", help="interlanguage links TSV")
    p.add_argument("--out", help="write the machine-readable TSV here")

    p = add("histogram", "gold-label frequency histogram", cmd_histogram)
    p.add_argument("--gold", help="gold labels TSV")
    p.add_argument("--top", type=int, default=None, help="keep only the N most frequent labels")
    p.add_argument("--out", help="write the TSV here (default stdout)")
    p.add_argument("--plot", help="figure path (default: alongside --out)")

    p = add("train", "stage 1: train the multilingual model", cmd_train)
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--save-optimizer", action="store_true", help="embed optimizer state")

    p = add("finetune", "stage 2: fine-tune for one language", cmd_finetune)
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--base", help="stage-1 checkpoint to continue from")
    p.add_argument("--language", help="language to fine-tune on")
    p.add_argument("--out", help="checkpoint output path")
    p.add_argument("--save-optimizer", action="store_true", help="embed optimizer state")

    p = add("predict", "stage 2.5: thresholded label assignment", cmd_predict)
    p.add_argument("--taxonomy", help="taxonomy definition TSV")
    p.add_argument("--pages", help="directory of per-language page files")
    p.add_argument("--checkpoint", help="model checkpoint")
    p.add_argument("--languages", help="comma-separated language filter")
    p.add_argument("--threshold", type=float, default=None, help="sigmoid threshold")
    p.add_argument("--workers", type=int, default=None, help="parallel prediction workers")
    p.add_argument("--skip-errors", action="store_true", help="skip unpredictable pages")
    p.add_argument("--out", help="prediction records output (default stdout)")

    p = add("vote", "stage 3: cross-lingual voting", cmd_vote)
    p.add_argument("--links", help="interlanguage links TSV")
    p.add_argument("--pred", help="prediction records from 'predict'")
    p.add_argument("--strict-vote", action="store_true", help="require counts strictly above the mean")
    p.add_argument("--advisory", action="store_true", help="intersect votes instead of overwriting")
    p.add_argument("--out", help="voted prediction records output (default stdout)")

    p = add("eval", "micro-averaged precision/recall/F against gold", cmd_eval)
    p.add_argument("--pred", help="prediction records")
    p.add_argument("--gold", help="gold labels TSV")
    p.add_argument("--score-extra", action="store_true", help="count predictions for non-gold pages as false positives")
    p.add_argument("--name", default=None, help="config column value in the TSV")
    p.add_argument("--out", help="write the metrics TSV here")

    p = add("ablate", "four-configuration ablation report", cmd_ablate)
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--links", help="interlanguage links TSV")
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float, default=None)
    p.add_argument("--out", help="write the report TSV here")
    p.add_argument("--plot", help="figure path (default: alongside --out)")

    p = add("gradcheck", "verify analytic gradients against finite differences", cmd_gradcheck)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None, help="number of consecutive seeds to check")

    return parser


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--taxonomy", help="taxonomy definition TSV")
    p.add_argument("--pages", help="directory of per-language page files")
    p.add_argument("--gold", help="gold labels TSV")


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--finetune-epochs", dest="finetune_epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--lr", dest="learning_rate", type=float, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--languages", default=None, help="comma-separated language filter")
    p.add_argument("--holdout", dest="holdout_fraction", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=None)
    p.add_argument("--embed-dim", dest="embed_dim", type=int, default=None)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=None)
    p.add_argument("--feedback", choices=("logits", "sigmoid"), default=None)
    p.add_argument("--content-rule", dest="content_rule", choices=("text", "opening+text"), default=None)


def _file_config(args) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    _require_exists(path, "config")
    with open(path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path}: expected a flat JSON object")
    for key in raw:
        if key not in _TRAIN_FIELDS and key not in _PATH_KEYS and key not in _MODE_KEYS:
            raise ConfigError(f"config file {path}: unknown key {key!r}")
    return raw


def _train_config(args, file_cfg: dict) -> TrainConfig:
    values = {k: v for k, v in file_cfg.items() if k in _TRAIN_FIELDS}
    for name in _TRAIN_FIELDS:
        override = getattr(args, name, None)
        if override is not None:
            values[name] = override
    if isinstance(values.get("languages"), str):
        values["languages"] = tuple(
            lang.strip().lower() for lang in values["languages"].split(",") if lang.strip()
        )
    elif isinstance(values.get("languages"), list):
        values["languages"] = tuple(values["languages"])
    try:
        config = TrainConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config


def _setting(args, file_cfg: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value in (None, False):
        value = file_cfg.get(key, value)
    if value is None:
        value = default
    return value


def _required_path(args, file_cfg: dict, key: str) -> str:
    value = _setting(args, file_cfg, key)
    if not value:
        raise UsageError(f"missing required --{key.replace('_', '-')}")
    return _require_exists(value, key)


def _require_exists(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"{what} path does not exist: {path}")
    return path


def _required_out(args, file_cfg: dict, key: str = "out") -> str:
    value = _setting(args, file_cfg, key)
    if not value:
        raise UsageError(f"missing required --{key}")
    return value


def _language_files(pages_dir: str, languages: Iterable[str] | None = None) -> dict[str, str]:
    if not os.path.isdir(pages_dir):
        raise DataError(f"pages path is not a directory: {pages_dir}")
    files = {}
    for name in sorted(os.listdir(pages_dir)):
        if name.endswith(".jsonl"):
            files[name[: -len(".jsonl")].lower()] = os.path.join(pages_dir, name)
    if languages is not None:
        wanted = {lang.lower() for lang in languages}
        missing = wanted - files.keys()
        if missing:
            raise DataError(f"no page file for language(s): {', '.join(sorted(missing))}")
        files = {lang: path for lang, path in files.items() if lang in wanted}
    if not files:
        raise DataError(f"no <lang>.jsonl page files found in {pages_dir}")
    return files


def _load_all_pages(pages_dir: str, languages=None) -> dict[str, list[Page]]:
    counters = ReadCounters()
    pages = {}
    for lang, path in _language_files(pages_dir, languages).items():
        pages[lang] = list(read_pages(path, lang, counters=counters))
    if counters.skipped_empty:
        log.warning("skipped %d page records with no usable content", counters.skipped_empty)
    return pages


def _plot_path(args, file_cfg: dict, out_path: str | None) -> str | None:
    explicit = _setting(args, file_cfg, "plot")
    if explicit:
        return explicit
    if out_path:
        return os.path.splitext(out_path)[0] + ".png"
    return None


def _open_out(path: str | None) -> tuple[TextIO, bool]:
    if path:
        return open(path, "w", encoding="utf-8"), True
    return sys.stdout, False


# --- subcommands ---------------------------------------------------------


def cmd_stats(args) -> int:
    file_cfg = _file_config(args)
    pages_dir = _required_path(args, file_cfg, "pages")
    links_path = _required_path(args, file_cfg, "links")
    ids_by_language = {}
    for lang, path in _language_files(pages_dir).items():
        ids_by_language[lang] = {page.page_id for page in read_pages(path, lang)}
    rows = corpus_stats(ids_by_language, load_links(links_path))
    sys.stdout.write(format_stats_table(rows))
    out_path = _setting(args, file_cfg, "out")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(format_stats_tsv(rows))
        log.info("wrote %s", out_path)
    return 0


def cmd_histogram(args) -> int:
    file_cfg = _file_config(args)
    gold = load_gold_labels(_required_path(args, file_cfg, "gold"))
    top = _setting(args, file_cfg, "top")
    rows = label_histogram(gold, top=int(top) if top is not None else None)
    out_path = _setting(args, file_cfg, "out")
    handle, close = _open_out(out_path)
    try:
        handle.write(format_histogram(rows))
    finally:
        if close:
            handle.close()
    plot = _plot_path(args, file_cfg, out_path)
    if plot and rows:
        from .figures import save_histogram_figure

        save_histogram_figure(rows, plot)
        log.info("wrote %s", plot)
    return 0


def cmd_train(args) -> int:
    file_cfg = _file_config(args)
    config = _train_config(args, file_cfg)
    taxonomy = load_taxonomy(_required_path(args, file_cfg, "taxonomy"))
    pages = _load_all_pages(_required_path(args, file_cfg, "pages"), config.languages)
    gold = load_gold_labels(_required_path(args, file_cfg, "gold"))
    out_path = _required_out(args, file_cfg)
    result = train_multilingual(pages, gold, taxonomy, config)
    meta = dict(result.meta, tool_version=__version__)
    optimizer = result.optimizer if _setting(args, file_cfg, "save_optimizer", False) else None
    save_checkpoint(out_path, result.model, optimizer, taxonomy.content_hash(), meta)
    log.info("wrote %s (%s)", out_path, result.meta)
    return 0


def cmd_finetune(args) -> int:
    file_cfg = _file_config(args)
    config = _train_config(args, file_cfg)
    taxonomy = load_taxonomy(_required_path(args, file_cfg, "taxonomy"))
    base_path = _required_path(args, file_cfg, "base")
    language = _setting(args, file_cfg, "language") or (
        config.languages[0] if config.languages and len(config.languages) == 1 else None
    )
    if not language:
        raise UsageError("missing required --language")
    checkpoint = load_checkpoint(base_path, taxonomy.content_hash())
    pages = _load_all_pages(_required_path(args, file_cfg, "pages"), (language,))
    gold = load_gold_labels(_required_path(args, file_cfg, "gold"))
    out_path = _required_out(args, file_cfg)
    result = finetune(checkpoint.model, pages, gold, taxonomy, config, language)
    meta = dict(result.meta, tool_version=__version__, base=os.path.basename(base_path))
    optimizer = result.optimizer if _setting(args, file_cfg, "save_optimizer", False) else None
    save_checkpoint(out_path, result.model, optimizer, taxonomy.content_hash(), meta)
    log.info("wrote %s (%s)", out_path, result.meta)
    return 0


def cmd_predict(args) -> int:
    file_cfg = _file_config(args)
    taxonomy = load_taxonomy(_required_path(args, file_cfg, "taxonomy"))
    checkpoint = load_checkpoint(
        _required_path(args, file_cfg, "checkpoint"), taxonomy.content_hash()
    )
    meta = checkpoint.meta
    threshold = _setting(args, file_cfg, "threshold", meta.get("threshold", 0.5))
    languages = _setting(args, file_cfg, "languages")
    if isinstance(languages, str):
        languages = tuple(lang.strip() for lang in languages.split(",") if lang.strip())
    files = _language_files(_required_path(args, file_cfg, "pages"), languages)
    workers = int(_setting(args, file_cfg, "workers", 1))
    counters = PredictCounters()

    def all_pages() -> Iterator[Page]:
        read_counters = ReadCounters()
        for lang, path in files.items():
            yield from read_pages(path, lang, counters=read_counters)

    predictions = predict_batch(
        all_pages(),
        checkpoint.model,
        taxonomy,
        threshold=float(threshold),
        max_len=int(meta.get("max_len", 512)),
        content_rule=str(meta.get("content_rule", "text")),
        feedback=str(meta.get("feedback", "logits")),
        workers=workers,
        skip_errors=bool(_setting(args, file_cfg, "skip_errors", False)),
        counters=counters,
    )
    out_path = _setting(args, file_cfg, "out")
    handle, close = _open_out(out_path)
    try:
        count = write_predictions(handle, predictions)
    finally:
        if close:
            handle.close()
    log.info("wrote %d predictions (%d skipped)", count, counters.skipped)
    return 0


def cmd_vote(args) -> int:
    file_cfg = _file_config(args)
    links = load_links(_required_path(args, file_cfg, "links"))
    predictions = read_predictions(_required_path(args, file_cfg, "pred"))
    stats = VotingStats()
    voted = apply_voting(
        links,
        predictions,
        strict=bool(_setting(args, file_cfg, "strict_vote", False)),
        advisory=bool(_setting(args, file_cfg, "advisory", False)),
        stats=stats,
    )
    out_path = _setting(args, file_cfg, "out")
    handle, close = _open_out(out_path)
    try:
        write_predictions(handle, voted, vote_stage=True)
    finally:
        if close:
            handle.close()
    log.info(
        "voted %d groups, updated %d members, %d members lacked predictions",
        stats.groups_voted,
        stats.members_updated,
        stats.members_without_prediction,
    )
    return 0


def cmd_eval(args) -> int:
    file_cfg = _file_config(args)
    predictions = read_predictions(_required_path(args, file_cfg, "pred"))
    gold = load_gold_labels(_required_path(args, file_cfg, "gold"))
    predicted = {p.key: p.labels for p in predictions}
    by_language = evaluate_by_language(
        predicted, gold, count_extra=bool(_setting(args, file_cfg, "score_extra", False))
    )
    sys.stdout.write(format_metrics(by_language))
    out_path = _setting(args, file_cfg, "out")
    if out_path:
        name = str(_setting(args, file_cfg, "name", "eval"))
        with open(out_path, "w", encoding="utf-8") as handle:
            write_metrics_tsv(
                handle, [(name, lang, metrics) for lang, metrics in by_language.items()]
            )
        log.info("wrote %s", out_path)
    return 0


def cmd_ablate(args) -> int:
    from .ablation import format_ablation_table, run_ablation

    file_cfg = _file_config(args)
    config = _train_config(args, file_cfg)
    taxonomy = load_taxonomy(_required_path(args, file_cfg, "taxonomy"))
    pages = _load_all_pages(_required_path(args, file_cfg, "pages"), config.languages)
    gold = load_gold_labels(_required_path(args, file_cfg, "gold"))
    links = load_links(_required_path(args, file_cfg, "links"))
    report = run_ablation(
        pages,
        gold,
        links,
        taxonomy,
        config,
        eval_fraction=float(_setting(args, file_cfg, "eval_fraction", 0.25)),
    )
    sys.stdout.write(format_ablation_table(report))
    out_path = _setting(args, file_cfg, "out")
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            write_metrics_tsv(handle, report.tsv_rows())
        log.info("wrote %s", out_path)
    plot = _plot_path(args, file_cfg, out_path)
    if plot:
        from .figures import save_ablation_figure

        save_ablation_figure(report, plot)
        log.info("wrote %s", plot)
    return 0


def cmd_gradcheck(args) -> int:
    file_cfg = _file_config(args)
    seed = int(_setting(args, file_cfg, "seed", 42))
    trials = int(_setting(args, file_cfg, "trials", 3))
    worst = 0.0
    worst_tensor = ""
    for trial in range(max(1, trials)):
        result = gradient_check(seed + trial)
        if result.max_rel_error > worst:
            worst = result.max_rel_error
            worst_tensor = result.worst_tensor
    print(f"max relative error {worst:.3e} (tensor {worst_tensor!r})")
    if worst >= 1e-4:
        print("gradient check FAILED (threshold 1e-4)", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
