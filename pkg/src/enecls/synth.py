"""Synthetic bilingual corpora for tests, demos, and the ablation harness.

Each fixture is built from "concepts": an entity with one or two
fine-grained labels, realized as one page per language.  Pages of the same
concept share a link group and identical gold labels.  Label-specific
signature words make the mapping learnable; ``permuted=True`` reuses the
same signature words across languages but shifts which label they mean, so
a single multilingual model sees contradictory supervision that only
per-language fine-tuning can resolve.

Run ``python -m enecls.synth --out DIR`` to materialize a fixture on disk
in the formats every CLI subcommand consumes.
"""

from __future__ import annotations

import argparse
import json
import os
from dataclasses import dataclass

from .corpus import LinkGroup, Page, PageKey
from .seeding import STREAM_FIXTURE, stream
from .taxonomy import Taxonomy, load_taxonomy

# Two roots, three level-2, five level-3, seven assignable level-4 labels.
SMALL_TAXONOMY_LINES = [
    "1\t0\tthing",
    "2\t0\tevent",
    "1.1\t0\tperson",
    "1.2\t0\tplace",
    "2.1\t0\toccasion",
    "1.1.1\t0\tartist",
    "1.1.2\t0\tleader",
    "1.2.1\t0\tsettlement",
    "2.1.1\t0\tfestival",
    "2.1.2\t0\tincident",
    "1.1.1.1\t1\tpainter",
    "1.1.1.2\t1\tmusician",
    "1.1.2.1\t1\tmonarch",
    "1.2.1.1\t1\tcity",
    "2.1.1.1\t1\tfair",
    "2.1.2.1\t1\tstorm",
    "2.1.2.2\t1\tquake",
]


def small_taxonomy() -> Taxonomy:
    """The 3/5/7 test taxonomy (level-2/3/4 sizes)."""
    return load_taxonomy(SMALL_TAXONOMY_LINES)


@dataclass
class Fixture:
    taxonomy: Taxonomy
    pages_by_language: dict[str, list[Page]]
    gold: dict[PageKey, set[str]]
    links: list[LinkGroup]


def make_fixture(
    n_concepts: int = 100,
    seed: int = 7,
    languages: tuple[str, str] = ("en", "fr"),
    permuted: bool = False,
    noise_words: int = 5,
) -> Fixture:
    """Build an in-memory bilingual fixture of ``2 * n_concepts`` pages."""
    taxonomy = small_taxonomy()
    leaves = [label.id for label in taxonomy.assignable_level4()]
    rng = stream(seed, STREAM_FIXTURE)
    pages: dict[str, list[Page]] = {lang: [] for lang in languages}
    gold: dict[PageKey, set[str]] = {}
    links: list[LinkGroup] = []

    def signature(lang_index: int, leaf_index: int) -> list[str]:
        if permuted:
            # Shared surfaces, shifted meaning in the second language: the
            # same words support different labels depending on the language.
            family = (leaf_index + lang_index) % len(leaves)
            return [f"sig{family}{suffix}" for suffix in "abc"]
        return [f"{languages[lang_index]}sig{leaf_index}{suffix}" for suffix in "abc"]

    for concept in range(n_concepts):
        n_labels = 2 if rng.random() < 0.3 else 1
        leaf_indices = sorted(rng.choice(len(leaves), size=n_labels, replace=False).tolist())
        labels = {leaves[i] for i in leaf_indices}
        page_id = f"p{concept}"
        links.append(
            LinkGroup(group_id=f"g{concept}", members={lang: page_id for lang in languages})
        )
        for lang_index, lang in enumerate(languages):
            words = []
            for leaf_index in leaf_indices:
                words.extend(signature(lang_index, leaf_index) * 2)
            if permuted:
                words.extend(f"noise{rng.integers(0, 20)}" for _ in range(noise_words))
            else:
                words.extend(f"{lang}noise{rng.integers(0, 20)}" for _ in range(noise_words))
            perm = rng.permutation(len(words))
            text = " ".join(words[i] for i in perm)
            pages[lang].append(
                Page(page_id=page_id, language=lang, title=f"{lang} concept {concept}", text=text)
            )
            gold[(lang, page_id)] = set(labels)
    return Fixture(taxonomy=taxonomy, pages_by_language=pages, gold=gold, links=links)


def write_fixture(fixture: Fixture, out_dir: str) -> dict[str, str]:
    """Write a fixture in the on-disk formats; returns the path map."""
    os.makedirs(out_dir, exist_ok=True)
    pages_dir = os.path.join(out_dir, "pages")
    os.makedirs(pages_dir, exist_ok=True)
    paths = {
        "taxonomy": os.path.join(out_dir, "taxonomy.tsv"),
        "pages": pages_dir,
        "gold": os.path.join(out_dir, "gold.tsv"),
        "links": os.path.join(out_dir, "links.tsv"),
    }
    with open(paths["taxonomy"], "w", encoding="utf-8") as handle:
        handle.write("\n".join(SMALL_TAXONOMY_LINES) + "\n")
    for lang, pages in fixture.pages_by_language.items():
        with open(os.path.join(pages_dir, f"{lang}.jsonl"), "w", encoding="utf-8") as handle:
            for page in pages:
                record = {
                    "pageid": page.page_id,
                    "lang": page.language,
                    "title": page.title,
                    "text": page.text,
                }
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")
    with open(paths["gold"], "w", encoding="utf-8") as handle:
        for (lang, page_id), labels in fixture.gold.items():
            handle.write(f"{lang}\t{page_id}\t{','.join(sorted(labels))}\n")
    with open(paths["links"], "w", encoding="utf-8") as handle:
        for group in fixture.links:
            for lang, page_id in group.members.items():
                handle.write(f"{group.group_id}\t{lang}\t{page_id}\n")
    return paths


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Generate a synthetic bilingual fixture.")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--concepts", type=int, default=100)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument(
        "--permuted",
        action="store_true",
        help="share signature words across languages with shifted meanings",
    )
    args = parser.parse_args(argv)
    fixture = make_fixture(n_concepts=args.concepts, seed=args.seed, permuted=args.permuted)
    paths = write_fixture(fixture, args.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
