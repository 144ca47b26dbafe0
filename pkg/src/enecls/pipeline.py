"""The three-stage workflow: multilingual training, per-language fine-tuning,
and thresholded prediction.

Stage 1 trains one model on the shuffled union of every language's labeled
pages.  Stage 2 continues from those parameters on a single language with a
fresh optimizer.  Prediction squashes the fine-grained logits through a
sigmoid and assigns every assignable label whose probability clears the
threshold, falling back to the single best label when none does (an empty
set would forfeit all recall).

Runs are deterministic: all randomness derives from the config seed, and
identical (config, seed, data) triples produce bit-identical checkpoints
and predictions.
"""

from __future__ import annotations

import dataclasses
import io
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

from . import evaluation
from .corpus import Page, PageKey, main_content
from .encoder import (
    DEFAULT_EMBED_DIM,
    DEFAULT_HIDDEN_DIM,
    DEFAULT_VOCAB_SIZE,
    TokenSequence,
    encode_batch,
    encoder_backward_batch,
    init_encoder_params,
    tokenize,
)
from .errors import ConfigError, DataError, NumericError
from .hmcn import (
    LossWeights,
    ModelParams,
    OptimizerState,
    _backward_arrays,
    _forward_arrays,
    _loss_arrays,
    adam_step,
    frequency_weights,
    init_head_params,
    init_optimizer,
    ones_weights,
    sigmoid,
)
from .seeding import (
    STREAM_GRADCHECK,
    STREAM_HOLDOUT,
    STREAM_INIT_ENCODER,
    STREAM_SHUFFLE,
    stream,
)
from .taxonomy import LevelTargets, Taxonomy, encode_targets

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Hyperparameters and data knobs for training and prediction.

    ``transformer_preset`` carries the settings tuned for transformer-scale
    encoders (learning rate 2e-5, batch 45); the defaults here are tuned for
    the small trainable reference encoder.
    """

    max_len: int = 512
    epochs: int = 100
    finetune_epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 42
    threshold: float = 0.5
    languages: tuple[str, ...] | None = None
    holdout_fraction: float = 0.1
    patience: int = 20
    vocab_size: int = DEFAULT_VOCAB_SIZE
    embed_dim: int = DEFAULT_EMBED_DIM
    hidden_dim: int = DEFAULT_HIDDEN_DIM
    feedback: str = "logits"
    content_rule: str = "text"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.max_len < 3:
            raise ConfigError(f"max_len must be at least 3, got {self.max_len}")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError(f"holdout_fraction must lie in [0, 1), got {self.holdout_fraction}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.feedback not in ("logits", "sigmoid"):
            raise ConfigError(f"feedback must be 'logits' or 'sigmoid', got {self.feedback!r}")
        if self.content_rule not in ("text", "opening+text"):
            raise ConfigError(f"content_rule must be 'text' or 'opening+text', got {self.content_rule!r}")
        if min(self.vocab_size, self.embed_dim, self.hidden_dim) <= 0:
            raise ConfigError("encoder dimensions must be positive")

    @classmethod
    def transformer_preset(cls, **overrides) -> "TrainConfig":
        """The documented large-encoder settings: batch 45, lr 2e-5."""
        preset = dict(learning_rate=2e-5, batch_size=45, max_len=512)
        preset.update(overrides)
        return cls(**preset)


@dataclass
class PredictionSet:
    """Labels assigned to one page, with their sigmoid scores.

    In a non-fallback, non-voted set every label's score clears the
    threshold.  ``fallback`` marks top-1 rescue sets; ``voted`` marks sets
    rewritten by cross-lingual voting (their labels may lack local scores).
    """

    language: str
    page_id: str
    labels: set[str]
    scores: dict[str, float] = field(default_factory=dict)
    fallback: bool = False
    voted: bool = False
    tally: dict[str, int] | None = None

    @property
    def key(self) -> PageKey:
        return (self.language, self.page_id)


@dataclass
class TrainExample:
    """One labeled page, tokenized and target-encoded."""

    language: str
    page_id: str
    tokens: TokenSequence
    targets: LevelTargets
    gold: frozenset[str]


@dataclass
class TrainResult:
    model: ModelParams
    optimizer: OptimizerState
    history: list[dict]
    meta: dict


@dataclass
class PredictCounters:
    skipped: int = 0


def build_examples(
    pages_by_language: Mapping[str, Iterable[Page]],
    gold: Mapping[PageKey, set[str]],
    taxonomy: Taxonomy,
    config: TrainConfig,
) -> tuple[list[TrainExample], int]:
    """Join pages with gold labels into training examples.

    Returns the examples plus the number of gold entries whose page never
    appeared in the dump (dropped with a warning; gold data is noisy).
    """
    languages = sorted(pages_by_language)
    if config.languages is not None:
        wanted = {lang.lower() for lang in config.languages}
        languages = [lang for lang in languages if lang.lower() in wanted]
    examples = []
    matched: set[PageKey] = set()
    for lang in languages:
        lang_key = lang.lower()
        for page in pages_by_language[lang]:
            key = (lang_key, page.page_id)
            labels = gold.get(key)
            if not labels:
                continue
            content = main_content(page, config.content_rule)
            tokens = tokenize(content, config.max_len, config.vocab_size)
            examples.append(
                TrainExample(
                    language=lang_key,
                    page_id=page.page_id,
                    tokens=tokens,
                    targets=encode_targets(labels, taxonomy),
                    gold=frozenset(labels),
                )
            )
            matched.add(key)
    language_keys = {lang.lower() for lang in languages}
    in_scope = {key for key in gold if key[0] in language_keys}
    dropped = len(in_scope - matched)
    if dropped:
        log.warning("%d gold entries reference pages absent from the dump; dropped", dropped)
    return examples, dropped


def _target_rows(examples: Sequence[TrainExample], flat_head: bool) -> tuple[np.ndarray, ...]:
    y4 = np.stack([ex.targets.y4 for ex in examples])
    if flat_head:
        empty = np.zeros((len(examples), 0))
        return empty, empty, y4
    y2 = np.stack([ex.targets.y2 for ex in examples])
    y3 = np.stack([ex.targets.y3 for ex in examples])
    return y2, y3, y4


def train_on_examples(
    examples: Sequence[TrainExample],
    taxonomy: Taxonomy,
    config: TrainConfig,
    *,
    base: ModelParams | None = None,
    epochs: int | None = None,
    flat_head: bool = False,
    weighted: bool = True,
    holdout_fraction: float | None = None,
    stage: str = "multilingual",
) -> TrainResult:
    """Core training loop over pre-built examples.

    When ``holdout_fraction`` is positive, a seeded slice is held out and
    training stops early once its micro-F1 fails to improve for
    ``config.patience`` consecutive epochs, restoring the best parameters.
    Stopping is suppressed for the first ``2 * patience`` epochs: the
    held-out score routinely dips below its epoch-0 value while the head
    first learns that most labels are absent.
    """
    config.validate()
    if not examples:
        raise DataError("no labeled training pages")
    epochs = config.epochs if epochs is None else epochs
    fraction = config.holdout_fraction if holdout_fraction is None else holdout_fraction

    order = stream(config.seed, STREAM_HOLDOUT).permutation(len(examples))
    n_hold = int(round(fraction * len(examples)))
    if len(examples) - n_hold < 1:
        raise DataError("holdout fraction leaves no training data")
    holdout = [examples[i] for i in order[:n_hold]]
    train_set = [examples[i] for i in order[n_hold:]]

    d2, d3, d4 = taxonomy.vector_sizes()
    if d4 == 0:
        raise DataError("taxonomy has no level-4 labels to predict")
    sizes = (0, 0, d4) if flat_head else (d2, d3, d4)

    y_train = _target_rows(train_set, flat_head)
    if weighted:
        weights = LossWeights(
            *(frequency_weights(y.sum(axis=0)) if y.shape[1] else np.ones(0) for y in y_train)
        )
    else:
        weights = ones_weights(sizes)

    if base is not None:
        if base.head.level_sizes != sizes:
            raise DataError(
                f"base model head sizes {base.head.level_sizes} do not match"
                f" the taxonomy/head layout {sizes}"
            )
        model = base.copy()
    else:
        enc_rng = stream(config.seed, STREAM_INIT_ENCODER)
        encoder = init_encoder_params(
            enc_rng, config.vocab_size, config.embed_dim, config.hidden_dim
        )
        head = init_head_params(config.hidden_dim, sizes)
        model = ModelParams(encoder=encoder, head=head)

    optimizer = init_optimizer(
        model.named_tensors(), config.learning_rate, config.beta1, config.beta2, config.eps
    )
    embed_grad = np.zeros_like(model.encoder.embed)

    history: list[dict] = []
    best_f1 = -1.0
    best_state: tuple[ModelParams, OptimizerState] | None = None
    stale_epochs = 0
    epochs_run = 0
    gold_holdout = {(ex.language, ex.page_id): set(ex.gold) for ex in holdout}

    for epoch in range(epochs):
        perm = stream(config.seed, STREAM_SHUFFLE, epoch).permutation(len(train_set))
        epoch_loss = 0.0
        batches = 0
        for start in range(0, len(train_set), config.batch_size):
            batch = [train_set[i] for i in perm[start : start + config.batch_size]]
            seqs = [ex.tokens for ex in batch]
            h, mean = encode_batch(seqs, model.encoder)
            head_grads, dh, batch_loss = _backward_arrays(
                h, model.head, _target_rows(batch, flat_head), weights, config.feedback
            )
            if not np.isfinite(batch_loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            proj_g, bias_g, token_ids, token_rows = encoder_backward_batch(
                seqs, model.encoder, mean, h, dh
            )
            embed_grad.fill(0.0)
            np.add.at(embed_grad, token_ids, token_rows)
            grads = [
                embed_grad,
                proj_g,
                bias_g,
                head_grads.w2,
                head_grads.b2,
                head_grads.w3,
                head_grads.b3,
                head_grads.w4,
                head_grads.b4,
            ]
            adam_step([t for _, t in model.named_tensors()], grads, optimizer)
            epoch_loss += batch_loss
            batches += 1
        epochs_run = epoch + 1
        record = {"epoch": epoch, "train_loss": epoch_loss / max(batches, 1)}

        if holdout:
            predicted = {
                p.key: p.labels
                for p in predict_examples(
                    model, holdout, taxonomy, threshold=config.threshold, feedback=config.feedback
                )
            }
            metrics = evaluation.micro_f1(predicted, gold_holdout)
            record["holdout_f1"] = metrics.f1
            if metrics.f1 > best_f1:
                best_f1 = metrics.f1
                best_state = (model.copy(), _copy_optimizer(optimizer))
                stale_epochs = 0
            else:
                stale_epochs += 1
            history.append(record)
            if stale_epochs > config.patience and epoch + 1 >= 2 * config.patience:
                log.info("early stop at epoch %d (best holdout F1 %.4f)", epoch, best_f1)
                break
        else:
            history.append(record)
        if epoch % 10 == 0:
            log.info("%s epoch %d: %s", stage, epoch, record)

    if best_state is not None:
        model, optimizer = best_state

    meta = {
        "stage": stage,
        "seed": config.seed,
        "epochs_requested": epochs,
        "epochs_run": epochs_run,
        "max_len": config.max_len,
        "threshold": config.threshold,
        "feedback": config.feedback,
        "content_rule": config.content_rule,
        "flat_head": flat_head,
        "weighted": weighted,
        "examples": len(examples),
        "best_holdout_f1": best_f1 if best_f1 >= 0 else None,
    }
    return TrainResult(model=model, optimizer=optimizer, history=history, meta=meta)


def _copy_optimizer(state: OptimizerState) -> OptimizerState:
    return OptimizerState(
        m=[a.copy() for a in state.m],
        v=[a.copy() for a in state.v],
        step=state.step,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        names=state.names,
    )


def train_multilingual(
    pages_by_language: Mapping[str, Iterable[Page]],
    gold: Mapping[PageKey, set[str]],
    taxonomy: Taxonomy,
    config: TrainConfig,
) -> TrainResult:
    """Stage 1: one model over the union of all languages' labeled pages."""
    examples, _ = build_examples(pages_by_language, gold, taxonomy, config)
    return train_on_examples(examples, taxonomy, config, stage="multilingual")


def finetune(
    base: ModelParams,
    pages_by_language: Mapping[str, Iterable[Page]],
    gold: Mapping[PageKey, set[str]],
    taxonomy: Taxonomy,
    config: TrainConfig,
    language: str,
) -> TrainResult:
    """Stage 2: continue from the multilingual parameters on one language.

    The optimizer restarts from scratch; encoder dimensions follow the base
    model, not the config.
    """
    language = language.lower()
    effective = dataclasses.replace(
        config,
        languages=(language,),
        vocab_size=base.encoder.vocab_size,
        embed_dim=base.encoder.embed_dim,
        hidden_dim=base.encoder.hidden_dim,
    )
    examples, _ = build_examples(pages_by_language, gold, taxonomy, effective)
    if not examples:
        raise DataError(f"no labeled pages for language {language!r}")
    return train_on_examples(
        examples,
        taxonomy,
        effective,
        base=base,
        epochs=config.finetune_epochs,
        stage=f"finetune:{language}",
    )


def _assignable_index(taxonomy: Taxonomy) -> tuple[np.ndarray, list[str]]:
    mask = taxonomy.assignable_mask()
    if not mask.any():
        raise DataError("taxonomy marks no level-4 label assignable; nothing can be predicted")
    positions = np.flatnonzero(mask)
    ids = [label.id for label in taxonomy.labels(4)]
    return positions, ids


def _prediction_from_probs(
    language: str,
    page_id: str,
    probs: np.ndarray,
    positions: np.ndarray,
    level4_ids: list[str],
    threshold: float,
) -> PredictionSet:
    candidates = positions[probs[positions] >= threshold]
    fallback = candidates.size == 0
    if fallback:
        candidates = positions[[int(np.argmax(probs[positions]))]]
    labels = {level4_ids[i] for i in candidates}
    scores = {level4_ids[i]: float(probs[i]) for i in sorted(candidates)}
    return PredictionSet(
        language=language, page_id=page_id, labels=labels, scores=scores, fallback=fallback
    )


def predict_examples(
    model: ModelParams,
    examples: Sequence[TrainExample],
    taxonomy: Taxonomy,
    *,
    threshold: float = 0.5,
    feedback: str = "logits",
    batch_size: int = 256,
) -> list[PredictionSet]:
    """Thresholded predictions for already-tokenized examples."""
    positions, level4_ids = _assignable_index(taxonomy)
    _check_model_taxonomy(model, taxonomy)
    out = []
    for start in range(0, len(examples), batch_size):
        batch = examples[start : start + batch_size]
        h, _ = encode_batch([ex.tokens for ex in batch], model.encoder)
        _, _, a4, _, _ = _forward_arrays(h, model.head, feedback)
        probs = sigmoid(a4)
        for row, ex in enumerate(batch):
            out.append(
                _prediction_from_probs(
                    ex.language, ex.page_id, probs[row], positions, level4_ids, threshold
                )
            )
    return out


def _check_model_taxonomy(model: ModelParams, taxonomy: Taxonomy) -> None:
    d4 = taxonomy.vector_sizes()[2]
    sizes = model.head.level_sizes
    if sizes[2] != d4 or sizes[:2] not in ((0, 0), taxonomy.vector_sizes()[:2]):
        raise DataError(
            f"model head sizes {sizes} do not match the taxonomy's level sizes"
            f" {taxonomy.vector_sizes()}"
        )


def predict(
    page: Page,
    model: ModelParams,
    taxonomy: Taxonomy,
    *,
    threshold: float = 0.5,
    max_len: int = 512,
    content_rule: str = "text",
    feedback: str = "logits",
) -> PredictionSet:
    """Assign labels to one page.

    Every assignable fine-grained label whose sigmoid probability reaches
    the threshold is selected; if none does, the single best label is
    emitted with the fallback flag set.
    """
    content = main_content(page, content_rule)
    if not content:
        raise DataError(f"page {page.language}/{page.page_id} has no usable content")
    positions, level4_ids = _assignable_index(taxonomy)
    _check_model_taxonomy(model, taxonomy)
    tokens = tokenize(content, max_len, model.encoder.vocab_size)
    h, _ = encode_batch([tokens], model.encoder)
    _, _, a4, _, _ = _forward_arrays(h, model.head, feedback)
    probs = sigmoid(a4[0])
    return _prediction_from_probs(
        page.language, page.page_id, probs, positions, level4_ids, threshold
    )


def predict_from_vector(
    language: str,
    page_id: str,
    vector: np.ndarray,
    model: ModelParams,
    taxonomy: Taxonomy,
    *,
    threshold: float = 0.5,
    feedback: str = "logits",
) -> PredictionSet:
    """Assign labels from a precomputed document vector (external encoders)."""
    positions, level4_ids = _assignable_index(taxonomy)
    _check_model_taxonomy(model, taxonomy)
    _, _, a4, _, _ = _forward_arrays(np.asarray(vector, dtype=np.float64)[None, :], model.head, feedback)
    return _prediction_from_probs(
        language, page_id, sigmoid(a4[0]), positions, level4_ids, threshold
    )


def predict_batch(
    pages: Iterable[Page],
    model: ModelParams,
    taxonomy: Taxonomy,
    *,
    threshold: float = 0.5,
    max_len: int = 512,
    content_rule: str = "text",
    feedback: str = "logits",
    workers: int = 1,
    skip_errors: bool = False,
    counters: PredictCounters | None = None,
) -> Iterator[PredictionSet]:
    """Order-preserving batch prediction, identical to per-page ``predict``.

    With ``workers > 1`` pages are processed by a thread pool; results stay
    in input order and bit-identical to the single-worker path.  Per-page
    data errors raise with the page id, or are counted and skipped in skip
    mode.
    """
    if counters is None:
        counters = PredictCounters()

    def one(page: Page) -> PredictionSet | DataError:
        try:
            return predict(
                page,
                model,
                taxonomy,
                threshold=threshold,
                max_len=max_len,
                content_rule=content_rule,
                feedback=feedback,
            )
        except DataError as exc:
            return exc

    def handle(page: Page, result: PredictionSet | DataError) -> PredictionSet | None:
        if isinstance(result, DataError):
            if not skip_errors:
                raise result
            counters.skipped += 1
            log.warning("skipping page %s/%s: %s", page.language, page.page_id, result)
            return None
        return result

    if workers <= 1:
        for page in pages:
            result = handle(page, one(page))
            if result is not None:
                yield result
        return

    # windowed mapping keeps the input stream lazy (Executor.map would drain
    # it all up front) while preserving input order
    iterator = iter(pages)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        while True:
            window = list(itertools.islice(iterator, 1024))
            if not window:
                return
            for page, mapped in zip(window, pool.map(one, window, chunksize=16)):
                result = handle(page, mapped)
                if result is not None:
                    yield result


def write_predictions(
    target: str | TextIO, predictions: Iterable[PredictionSet], *, vote_stage: bool = False
) -> int:
    """Write newline-delimited prediction records; returns the record count.

    Records carry ``lang, pageid, labels, scores, fallback``; after voting
    (``vote_stage``) every record also carries ``voted`` and voted records
    their ``tally``.
    """
    own = isinstance(target, str)
    handle = open(target, "w", encoding="utf-8") if own else target
    count = 0
    try:
        for pred in predictions:
            record = {
                "lang": pred.language,
                "pageid": pred.page_id,
                "labels": sorted(pred.labels),
                "scores": {label: pred.scores[label] for label in sorted(pred.scores)},
                "fallback": pred.fallback,
            }
            if vote_stage or pred.voted:
                record["voted"] = pred.voted
                if pred.tally is not None:
                    record["tally"] = {label: pred.tally[label] for label in sorted(pred.tally)}
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
            count += 1
    finally:
        if own:
            handle.close()
    return count


def read_predictions(source: str | TextIO | Iterable[str]) -> list[PredictionSet]:
    """Read prediction records written by :func:`write_predictions`."""
    out = []
    for lineno, line in enumerate(_pred_lines(source), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"prediction record line {lineno}: invalid JSON ({exc.msg})") from None
        try:
            out.append(
                PredictionSet(
                    language=str(obj["lang"]),
                    page_id=str(obj["pageid"]),
                    labels=set(obj["labels"]),
                    scores={str(k): float(v) for k, v in obj.get("scores", {}).items()},
                    fallback=bool(obj.get("fallback", False)),
                    voted=bool(obj.get("voted", False)),
                    tally={str(k): int(v) for k, v in obj["tally"].items()}
                    if obj.get("tally") is not None
                    else None,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"prediction record line {lineno}: {exc}") from None
    return out


def _pred_lines(source: str | TextIO | Iterable[str]) -> Iterator[str]:
    if isinstance(source, str):
        with open(source, encoding="utf-8") as handle:
            yield from handle
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        yield from source  # type: ignore[misc]
    else:
        yield from source


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_tensor: str
    per_tensor: dict[str, float]

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def gradient_check(
    seed: int,
    *,
    vocab_size: int = 64,
    embed_dim: int = 6,
    hidden_dim: int = 8,
    level_sizes: tuple[int, int, int] = (3, 5, 7),
    docs: int = 2,
    delta: float = 1e-4,
    feedback: str = "logits",
) -> GradCheckResult:
    """Compare analytic encoder+head gradients against central differences.

    Builds a random small model and batch from the seed, computes the exact
    gradients of the training loss, then perturbs every parameter by
    +/-delta and re-evaluates the loss.  Entries where both gradients are
    below 1e-6 in magnitude count as matched when their difference is too.
    """
    rng = stream(seed, STREAM_GRADCHECK)
    encoder = init_encoder_params(rng, vocab_size, embed_dim, hidden_dim, dtype=np.float64)
    head = init_head_params(hidden_dim, level_sizes, rng=rng, dtype=np.float64)
    model = ModelParams(encoder=encoder, head=head)

    texts = []
    for _ in range(docs):
        words = [
            "".join(chr(97 + rng.integers(0, 26)) for _ in range(int(rng.integers(2, 7))))
            for _ in range(int(rng.integers(3, 9)))
        ]
        texts.append(" ".join(words))
    seqs = [tokenize(text, max_len=32, vocab_size=vocab_size) for text in texts]
    targets = tuple(rng.integers(0, 2, size=(docs, d)).astype(np.float64) for d in level_sizes)
    weights = LossWeights(*(rng.uniform(0.1, 1.0, size=d) for d in level_sizes))

    def loss_at() -> float:
        h, _ = encode_batch(seqs, model.encoder)
        a2, a3, a4, _, _ = _forward_arrays(h, model.head, feedback)
        return _loss_arrays((a2, a3, a4), targets, weights)

    h, mean = encode_batch(seqs, model.encoder)
    head_grads, dh, _ = _backward_arrays(h, model.head, targets, weights, feedback)
    proj_g, bias_g, token_ids, token_rows = encoder_backward_batch(
        seqs, model.encoder, mean, h, dh
    )
    embed_g = np.zeros_like(model.encoder.embed)
    np.add.at(embed_g, token_ids, token_rows)
    analytic = {
        "embed": embed_g,
        "proj": proj_g,
        "enc_bias": bias_g,
        "head_w2": head_grads.w2,
        "head_b2": head_grads.b2,
        "head_w3": head_grads.w3,
        "head_b3": head_grads.b3,
        "head_w4": head_grads.w4,
        "head_b4": head_grads.b4,
    }

    per_tensor = {}
    worst = ("", 0.0)
    for name, param in model.named_tensors():
        flat = param.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + delta
            up = loss_at()
            flat[i] = original - delta
            down = loss_at()
            flat[i] = original
            numeric[i] = (up - down) / (2.0 * delta)
        a = analytic[name].reshape(-1)
        diff = np.abs(a - numeric)
        magnitude = np.maximum(np.abs(a), np.abs(numeric))
        near_zero = (magnitude <= 1e-6) & (diff <= 1e-6)
        rel = np.where(near_zero, 0.0, diff / np.maximum(magnitude, 1e-6))
        tensor_err = float(rel.max()) if rel.size else 0.0
        per_tensor[name] = tensor_err
        if tensor_err > worst[1]:
            worst = (name, tensor_err)
    return GradCheckResult(max_rel_error=worst[1], worst_tensor=worst[0], per_tensor=per_tensor)
