"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see every line.
Published full-scale scores (e.g. per-language F values in the 80s) are not
reproducible at this package's desk scale and are not asserted here; the
quantitative checks run on seeded synthetic fixtures instead.
"""

import math
import time

import numpy as np

from enecls.cli import main
from enecls.evaluation import micro_f1
from enecls.hmcn import LevelLogits, frequency_weights, loss, ones_weights
from enecls.pipeline import (
    TrainConfig,
    build_examples,
    gradient_check,
    predict_examples,
    train_multilingual,
    train_on_examples,
)
from enecls.seeding import STREAM_SPLIT, stream
from enecls.synth import make_fixture, write_fixture
from enecls.taxonomy import LevelTargets, encode_targets
from enecls.encoder import tokenize
from enecls.voting import VoteInput, vote

from conftest import random_taxonomy
from test_voting import brute_force_vote


def _report(number: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"[ACCEPTANCE {number:02d}] {name}: {status}  {detail}".rstrip(), flush=True)


def _fixture_config(**overrides) -> TrainConfig:
    values = dict(
        max_len=64,
        batch_size=32,
        learning_rate=3e-3,
        seed=5,
        vocab_size=4096,
        embed_dim=32,
        hidden_dim=64,
        holdout_fraction=0.0,
    )
    values.update(overrides)
    return TrainConfig(**values)


def test_01_gradient_oracle():
    """Analytic vs central-difference gradients over 20 seeds in under 10 s."""
    start = time.monotonic()
    worst = 0.0
    for seed in range(20):
        result = gradient_check(seed, delta=1e-4)
        worst = max(worst, result.max_rel_error)
    elapsed = time.monotonic() - start
    ok = worst < 1e-4 and elapsed < 10.0
    _report(1, "gradient oracle", ok, f"max rel err {worst:.2e}, {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 10.0


def test_02_weight_formula():
    cases_ok = (
        np.array_equal(frequency_weights([4, 1, 1]), [0.5, 1.0, 1.0])
        and np.array_equal(frequency_weights([5, 5, 5]), [1.0, 1.0, 1.0])
        and np.array_equal(frequency_weights([2, 0]), [0.5, 1.0])
    )
    _report(2, "weight formula", cases_ok)
    assert cases_ok


def test_03_voting_oracle():
    """1,000 random instances against an independent brute-force count."""
    boundary = vote(VoteInput("g", (("a", frozenset({"A"})), ("b", frozenset({"B"})))))
    boundary_ok = boundary.chosen == {"A", "B"}

    rng = np.random.default_rng(2021)
    labels = [f"L{i}" for i in range(8)]
    mismatches = 0
    for _ in range(1000):
        ballots = [
            (f"l{b}", frozenset(rng.choice(labels, size=int(rng.integers(1, 9)), replace=False)))
            for b in range(int(rng.integers(1, 7)))
        ]
        if vote(VoteInput("g", tuple(ballots))).chosen != brute_force_vote(ballots):
            mismatches += 1
    ok = mismatches == 0 and boundary_ok
    _report(3, "voting oracle", ok, f"{mismatches} mismatches in 1000 instances")
    assert mismatches == 0
    assert boundary_ok


def test_04_taxonomy_closure():
    """500 random subsets of random 4-level trees stay ancestor-closed."""
    rng = np.random.default_rng(606)
    failures = 0
    for trial in range(500):
        tax = random_taxonomy(rng)
        ids = [label.id for label in tax]
        subset = set(rng.choice(ids, size=int(rng.integers(0, min(8, len(ids)) + 1)), replace=False))
        targets = encode_targets(subset, tax)
        union = LevelTargets(
            np.zeros_like(targets.y2), np.zeros_like(targets.y3), np.zeros_like(targets.y4)
        )
        for label_id in subset:
            single = encode_targets({label_id}, tax)
            union.y2 = np.maximum(union.y2, single.y2)
            union.y3 = np.maximum(union.y3, single.y3)
            union.y4 = np.maximum(union.y4, single.y4)
        or_ok = (
            np.array_equal(union.y2, targets.y2)
            and np.array_equal(union.y3, targets.y3)
            and np.array_equal(union.y4, targets.y4)
        )
        closed = True
        for level, vector in ((2, targets.y2), (3, targets.y3), (4, targets.y4)):
            for pos in np.flatnonzero(vector):
                label = tax.labels(level)[pos]
                if label.level >= 3:
                    parent = tax.parent(label.id)
                    p_level, p_pos = tax.position(parent.id)
                    if targets.by_level()[p_level - 2][p_pos] != 1:
                        closed = False
        if not (or_ok and closed):
            failures += 1
    _report(4, "taxonomy closure", failures == 0, f"{failures} failures in 500 subsets")
    assert failures == 0


def test_05_loss_sanity():
    sizes = (3, 5, 7)
    zero_logits = LevelLogits(*(np.zeros(d) for d in sizes))
    targets = LevelTargets(*(np.zeros(d) for d in sizes))
    value = loss(zero_logits, targets, ones_weights(sizes))
    delta = abs(value - 3.0 * math.log(2.0))

    huge = LevelLogits(np.full(3, 1e4), np.full(5, -1e4), np.full(7, 1e4))
    huge_targets = LevelTargets(np.ones(3), np.ones(5), np.zeros(7))
    huge_value = loss(huge, huge_targets, ones_weights(sizes))
    ok = delta < 1e-9 and math.isfinite(huge_value)
    _report(5, "loss sanity", ok, f"|J - 3 ln 2| = {delta:.1e}, J(1e4 logits) = {huge_value:.3f}")
    assert delta < 1e-9
    assert math.isfinite(huge_value)


def test_06_overfit_check():
    """200 synthetic docs reach training micro-F1 >= 0.99 inside 100 epochs."""
    start = time.monotonic()
    fixture = make_fixture(n_concepts=100, seed=7)
    config = _fixture_config(epochs=100)
    result = train_multilingual(
        fixture.pages_by_language, fixture.gold, fixture.taxonomy, config
    )
    examples, _ = build_examples(
        fixture.pages_by_language, fixture.gold, fixture.taxonomy, config
    )
    predictions = predict_examples(result.model, examples, fixture.taxonomy, threshold=0.5)
    gold = {(e.language, e.page_id): set(e.gold) for e in examples}
    metrics = micro_f1({p.key: p.labels for p in predictions}, gold)
    elapsed = time.monotonic() - start
    ok = metrics.f1 >= 0.99 and elapsed < 60.0
    _report(6, "overfit check", ok, f"train F1 {metrics.f1:.4f} in {elapsed:.1f}s")
    assert metrics.f1 >= 0.99
    assert elapsed < 60.0


# First verified run of the seeded stage-1/stage-2 comparison, frozen as
# regression baselines (see test_07).
_STAGE1_BASELINE = {"en": 0.42105263157894735, "fr": 0.6666666666666666}
_FINETUNED_BASELINE = {"en": 0.6666666666666666, "fr": 0.7567567567567567}


def test_07_three_stage_pipeline(tmp_path):
    """Full train -> finetune -> predict -> vote -> eval on the seeded fixture."""
    fixture = make_fixture(n_concepts=60, seed=11, permuted=True)
    config = _fixture_config(epochs=40, finetune_epochs=30, batch_size=16)
    examples, _ = build_examples(
        fixture.pages_by_language, fixture.gold, fixture.taxonomy, config
    )
    order = stream(config.seed, STREAM_SPLIT).permutation(len(examples))
    n_eval = len(examples) // 4
    eval_set = [examples[i] for i in order[:n_eval]]
    train_set = [examples[i] for i in order[n_eval:]]
    stage1 = train_on_examples(train_set, fixture.taxonomy, config, stage="multilingual")

    improvements_ok = True
    measured = {}
    for language in ("en", "fr"):
        eval_lang = [e for e in eval_set if e.language == language]
        gold_lang = {(e.language, e.page_id): set(e.gold) for e in eval_lang}
        stage1_preds = predict_examples(stage1.model, eval_lang, fixture.taxonomy, threshold=0.5)
        stage1_f1 = micro_f1({p.key: p.labels for p in stage1_preds}, gold_lang).f1
        tuned = train_on_examples(
            [e for e in train_set if e.language == language],
            fixture.taxonomy,
            config,
            base=stage1.model,
            epochs=config.finetune_epochs,
            stage=f"finetune:{language}",
        )
        tuned_preds = predict_examples(tuned.model, eval_lang, fixture.taxonomy, threshold=0.5)
        tuned_f1 = micro_f1({p.key: p.labels for p in tuned_preds}, gold_lang).f1
        measured[language] = (stage1_f1, tuned_f1)
        if tuned_f1 < stage1_f1:
            improvements_ok = False

    baseline_ok = True
    for language in ("en", "fr"):
        stage1_f1, tuned_f1 = measured[language]
        if _STAGE1_BASELINE[language] is not None:
            baseline_ok &= abs(stage1_f1 - _STAGE1_BASELINE[language]) < 1e-6
            baseline_ok &= abs(tuned_f1 - _FINETUNED_BASELINE[language]) < 1e-6

    # the same stages end to end through the CLI surfaces
    data_dir = tmp_path / "fixture"
    write_fixture(fixture, str(data_dir))
    flags = [
        "--epochs", "10", "--finetune-epochs", "8", "--batch-size", "16", "--lr", "3e-3",
        "--max-len", "64", "--vocab-size", "4096", "--embed-dim", "32", "--hidden-dim", "64",
        "--holdout", "0", "--seed", "5", "-q",
    ]
    base = str(tmp_path / "base.ckpt")
    cli_ok = main(["train", "--taxonomy", f"{data_dir}/taxonomy.tsv", "--pages",
                   f"{data_dir}/pages", "--gold", f"{data_dir}/gold.tsv", "--out", base, *flags]) == 0
    prediction_files = []
    for language in ("en", "fr"):
        tuned_path = str(tmp_path / f"model-{language}.ckpt")
        cli_ok &= main(["finetune", "--taxonomy", f"{data_dir}/taxonomy.tsv", "--pages",
                        f"{data_dir}/pages", "--gold", f"{data_dir}/gold.tsv", "--base", base,
                        "--language", language, "--out", tuned_path, *flags]) == 0
        pred_path = str(tmp_path / f"preds-{language}.jsonl")
        cli_ok &= main(["predict", "--taxonomy", f"{data_dir}/taxonomy.tsv", "--checkpoint",
                        tuned_path, "--pages", f"{data_dir}/pages", "--languages", language,
                        "--out", pred_path, "-q"]) == 0
        prediction_files.append(pred_path)
    merged = tmp_path / "preds.jsonl"
    merged.write_text(
        "".join(open(path, encoding="utf-8").read() for path in prediction_files),
        encoding="utf-8",
    )
    voted = str(tmp_path / "voted.jsonl")
    cli_ok &= main(["vote", "--links", f"{data_dir}/links.tsv", "--pred", str(merged),
                    "--out", voted, "-q"]) == 0
    cli_ok &= main(["eval", "--pred", voted, "--gold", f"{data_dir}/gold.tsv",
                    "--out", str(tmp_path / "metrics.tsv"), "-q"]) == 0

    ok = improvements_ok and baseline_ok and cli_ok
    detail = ", ".join(
        f"{lang}: stage1 {s:.4f} -> finetuned {t:.4f}" for lang, (s, t) in measured.items()
    )
    _report(7, "three-stage pipeline", ok, detail)
    assert cli_ok, "CLI pipeline run failed"
    assert improvements_ok, f"fine-tuning regressed a language: {measured}"
    assert baseline_ok, f"regression vs frozen baselines: {measured}"


def test_08_micro_f1_oracle():
    from test_evaluation import brute_force_micro

    worked = micro_f1(
        {("en", "1"): {"A"}, ("en", "2"): {"B", "C"}},
        {("en", "1"): {"A"}, ("en", "2"): {"C", "D"}},
    )
    worked_ok = (
        (worked.tp, worked.fp, worked.fn) == (2, 1, 1)
        and abs(worked.f1 - 2.0 / 3.0) < 1e-12
    )

    rng = np.random.default_rng(808)
    labels = [f"L{i}" for i in range(10)]
    mismatches = 0
    for _ in range(300):
        gold = {}
        predictions = {}
        for p in range(int(rng.integers(1, 51))):
            key = ("en", f"p{p}")
            if rng.random() < 0.9:
                gold[key] = set(rng.choice(labels, size=int(rng.integers(1, 5)), replace=False))
            if rng.random() < 0.9:
                predictions[key] = set(
                    rng.choice(labels, size=int(rng.integers(1, 5)), replace=False)
                )
        metrics = micro_f1(predictions, gold)
        if (metrics.tp, metrics.fp, metrics.fn) != brute_force_micro(predictions, gold):
            mismatches += 1
    ok = worked_ok and mismatches == 0
    _report(8, "micro-F1 oracle", ok, f"{mismatches} mismatches in 300 fixtures")
    assert worked_ok
    assert mismatches == 0


def test_09_truncation():
    results = {}
    for m in (0, 1, 510, 511, 10_000):
        text = " ".join("a" for _ in range(m))
        results[m] = len(tokenize(text, max_len=512).ids)
    ok = all(length == min(m, 510) + 2 for m, length in results.items())
    _report(9, "truncation rule", ok, str(results))
    for m, length in results.items():
        assert length == min(m, 510) + 2


def test_10_determinism(tmp_path):
    """Identical train runs match byte for byte; workers do not change predict."""
    fixture = make_fixture(n_concepts=24, seed=19)
    data_dir = tmp_path / "fixture"
    write_fixture(fixture, str(data_dir))
    flags = ["--epochs", "4", "--batch-size", "16", "--lr", "3e-3", "--max-len", "64",
             "--vocab-size", "2048", "--embed-dim", "16", "--hidden-dim", "32",
             "--holdout", "0.1", "--seed", "5", "-q"]
    checkpoints = []
    for run in range(2):
        path = str(tmp_path / f"model-{run}.ckpt")
        assert main(["train", "--taxonomy", f"{data_dir}/taxonomy.tsv", "--pages",
                     f"{data_dir}/pages", "--gold", f"{data_dir}/gold.tsv", "--out", path,
                     *flags]) == 0
        checkpoints.append(open(path, "rb").read())
    train_ok = checkpoints[0] == checkpoints[1]

    outputs = []
    for workers in ("1", "4"):
        path = str(tmp_path / f"preds-w{workers}.jsonl")
        assert main(["predict", "--taxonomy", f"{data_dir}/taxonomy.tsv", "--checkpoint",
                     str(tmp_path / "model-0.ckpt"), "--pages", f"{data_dir}/pages",
                     "--workers", workers, "--out", path, "-q"]) == 0
        outputs.append(open(path, "rb").read())
    predict_ok = outputs[0] == outputs[1]
    ok = train_ok and predict_ok
    _report(
        10,
        "determinism",
        ok,
        f"train bytes identical: {train_ok}, predict workers 1 == 4: {predict_ok}",
    )
    assert train_ok
    assert predict_ok


def test_11_ablation_harness(tmp_path):
    """`ablate` emits the four-row report deterministically.

    Full-scale average gains (about +4.8 hierarchy, +2.1 weighting, +0.9
    voting) are documented context only: they required transformer-scale
    encoders and the original 30-language data, so nothing is asserted
    about desk-scale deltas.
    """
    fixture = make_fixture(n_concepts=24, seed=19)
    data_dir = tmp_path / "fixture"
    write_fixture(fixture, str(data_dir))
    flags = ["--epochs", "2", "--batch-size", "16", "--lr", "3e-3", "--max-len", "64",
             "--vocab-size", "2048", "--embed-dim", "16", "--hidden-dim", "32",
             "--holdout", "0", "--seed", "5", "-q"]
    reports = []
    for run in range(2):
        out = str(tmp_path / f"ablation-{run}.tsv")
        code = main(["ablate", "--taxonomy", f"{data_dir}/taxonomy.tsv", "--pages",
                     f"{data_dir}/pages", "--gold", f"{data_dir}/gold.tsv", "--links",
                     f"{data_dir}/links.tsv", "--out", out, *flags])
        assert code == 0
        reports.append(open(out, encoding="utf-8").read())
    identical = reports[0] == reports[1]
    configs = [line.split("\t")[0] for line in reports[0].splitlines()[1:]]
    rows_ok = [c for i, c in enumerate(configs) if i == 0 or configs[i - 1] != c] == [
        "flat", "+hierarchy", "+weighting", "+voting",
    ]
    ok = identical and rows_ok
    _report(11, "ablation harness", ok, f"identical reruns: {identical}, row order ok: {rows_ok}")
    assert identical
    assert rows_ok
