"""Streaming ingestion of page dumps, gold labels, and interlanguage links.

Page files are newline-delimited JSON objects (keys ``pageid``, ``lang``,
``title``, ``text``, ``opening_text``), one file per language.  Links and
gold labels are plain TSV.  Readers are single-pass generators, so peak
memory stays independent of file size for iteration-only consumers.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import Collection, Iterable, Iterator, Mapping, TextIO

from .errors import DataError
from .taxonomy import parse_label_id

log = logging.getLogger(__name__)

PageKey = tuple[str, str]  # (language, page_id)


@dataclass
class Page:
    """One Wikipedia article of one language edition."""

    page_id: str
    language: str
    title: str = ""
    text: str | None = None
    opening_text: str | None = None

    def __post_init__(self) -> None:
        if not self.page_id:
            raise DataError("page_id must be non-empty")
        if not self.language:
            raise DataError("language must be non-empty")


@dataclass
class LinkGroup:
    """Pages of different languages joined by an interlanguage identifier."""

    group_id: str
    members: dict[str, str]  # language -> page_id


@dataclass
class ReadCounters:
    """Tally of records a reader dropped instead of yielding."""

    skipped_empty: int = 0
    skipped_malformed: int = 0


def main_content(page: Page, rule: str = "text") -> str:
    """The string a page is classified from.

    The default rule uses the text body and falls back to the title when the
    body is missing or empty.  Rule ``"opening+text"`` prepends the opening
    section when present, with the same title fallback.
    """
    if rule == "opening+text":
        parts = [p for p in (page.opening_text, page.text) if p]
        if parts:
            return "\n".join(parts)
        return page.title
    if rule != "text":
        raise DataError(f"unknown content rule {rule!r}")
    if page.text:
        return page.text
    return page.title


def read_pages(
    source: str | TextIO | Iterable[str],
    language: str,
    *,
    strict: bool = True,
    counters: ReadCounters | None = None,
) -> Iterator[Page]:
    """Lazily yield pages from a newline-delimited record stream.

    Records missing both text and title are skipped with a counted warning.
    Malformed lines raise (strict mode, the default) or are counted and
    skipped.
    """
    if counters is None:
        counters = ReadCounters()
    language = language.lower()
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            continue
        try:
            page = _parse_page_line(line, language)
        except DataError as exc:
            if strict:
                raise DataError(f"page record line {lineno}: {exc}") from None
            counters.skipped_malformed += 1
            log.warning("skipping malformed page record at line %d: %s", lineno, exc)
            continue
        if page is None:
            counters.skipped_empty += 1
            log.warning("skipping page record at line %d: no text and no title", lineno)
            continue
        yield page


def _parse_page_line(line: str, language: str) -> Page | None:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON ({exc.msg})") from None
    if not isinstance(obj, dict):
        raise DataError("record is not an object")
    raw_id = obj.get("pageid")
    if raw_id is None or raw_id == "":
        raise DataError("missing pageid")
    page_id = str(raw_id)
    lang = obj.get("lang")
    if lang is not None and str(lang).lower() != language:
        raise DataError(f"language mismatch: record says {lang!r}, stream is {language!r}")
    title = _opt_str(obj, "title") or ""
    text = _opt_str(obj, "text")
    opening = _opt_str(obj, "opening_text")
    if not title and not text:
        return None
    return Page(page_id=page_id, language=language, title=title, text=text, opening_text=opening)


def _opt_str(obj: dict, key: str) -> str | None:
    value = obj.get(key)
    if value is None:
        return None
    if not isinstance(value, str):
        raise DataError(f"field {key!r} is not a string")
    return value


def load_links(source: str | TextIO | Iterable[str]) -> list[LinkGroup]:
    """Read interlanguage link groups from a ``group<TAB>lang<TAB>pageid`` TSV."""
    groups: dict[str, LinkGroup] = {}
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3 or not all(f.strip() for f in fields):
            raise DataError(f"links line {lineno}: expected group_id<TAB>lang<TAB>pageid")
        group_id, lang, page_id = (f.strip() for f in fields)
        lang = lang.lower()
        group = groups.setdefault(group_id, LinkGroup(group_id, {}))
        if lang in group.members:
            raise DataError(
                f"links line {lineno}: duplicate member for group {group_id!r}, language {lang!r}"
            )
        group.members[lang] = page_id
    return list(groups.values())


def load_gold_labels(source: str | TextIO | Iterable[str]) -> dict[PageKey, set[str]]:
    """Read gold labels from a ``lang<TAB>pageid<TAB>id,id,...`` TSV.

    Duplicate (language, page) rows merge their label sets.  Every id must
    parse as a valid dotted label; membership in a concrete taxonomy is
    checked later, at encoding time.
    """
    gold: dict[PageKey, set[str]] = {}
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3 or not all(f.strip() for f in fields):
            raise DataError(f"gold line {lineno}: expected lang<TAB>pageid<TAB>labels")
        lang, page_id, raw_labels = (f.strip() for f in fields)
        labels = set()
        for raw in raw_labels.split(","):
            raw = raw.strip()
            if not raw:
                raise DataError(f"gold line {lineno}: empty label id")
            parse_label_id(raw)
            labels.add(raw)
        gold.setdefault((lang.lower(), page_id), set()).update(labels)
    return gold


@dataclass
class StatsRow:
    """One corpus-statistics table row."""

    language: str
    pages: int
    linked: int
    ratio: float = field(init=False)

    def __post_init__(self) -> None:
        self.ratio = linked_ratio(self.pages, self.linked)


def linked_ratio(pages: int, linked: int) -> float:
    """Percentage of pages carrying an interlanguage link, one decimal."""
    if pages == 0:
        return 0.0
    return round(100.0 * linked / pages, 1)


def corpus_stats(
    pages_by_language: Mapping[str, Collection[Page] | Collection[str]],
    links: Iterable[LinkGroup],
) -> list[StatsRow]:
    """Per-language page counts, linked-page counts, and linked ratios.

    A page counts as linked when some link group names its (language, id)
    pair.  Rows are ordered by page count descending, then language.
    """
    ids_by_language: dict[str, set[str]] = {}
    for lang, pages in pages_by_language.items():
        ids = {p.page_id if isinstance(p, Page) else str(p) for p in pages}
        ids_by_language[lang.lower()] = ids
    linked: dict[str, set[str]] = {lang: set() for lang in ids_by_language}
    for group in links:
        for lang, page_id in group.members.items():
            if lang in ids_by_language and page_id in ids_by_language[lang]:
                linked[lang].add(page_id)
    rows = [
        StatsRow(language=lang, pages=len(ids), linked=len(linked[lang]))
        for lang, ids in ids_by_language.items()
    ]
    rows.sort(key=lambda r: (-r.pages, r.language))
    return rows


def _lines(source: str | TextIO | Iterable[str]) -> Iterator[str]:
    if isinstance(source, str):
        with open(source, encoding="utf-8") as handle:
            yield from handle
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        yield from source  # type: ignore[misc]
    else:
        yield from source
