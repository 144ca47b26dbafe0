"""The extended named-entity category tree.

Categories are identified by dotted ids ("1", "1.7", "1.7.19", "1.7.19.3");
a label's level is its number of dot-separated components, at most four.
Pages carry subsets of the tree as gold labels.  Training targets are
per-level multi-hot vectors over levels 2..4 with ancestor closure; level 1
is stored but never vectorized (too few classes to carry signal).

Terminal (assignable) categories may sit at any depth, so the definition
file flags assignability per label.  The prediction space of the
fine-grained head is the assignable subset of the level-4 positions.
"""

from __future__ import annotations

import dataclasses
import io
from dataclasses import dataclass
from typing import Iterable, Iterator, TextIO

import numpy as np

from .errors import TaxonomyError
from .hashing import fnv1a64

MAX_DEPTH = 4


@dataclass(frozen=True)
class EneLabel:
    """One category: dotted id, integer path, level, and display metadata."""

    id: str
    path: tuple[int, ...]
    level: int
    name: str | None = None
    assignable: bool = True


def format_label_id(path: Iterable[int]) -> str:
    return ".".join(str(c) for c in path)


def parse_label_id(raw: str) -> EneLabel:
    """Parse a dotted identifier into a label.

    Components must be canonical non-negative decimal integers (no signs,
    no leading zeros), at most four of them.
    """
    if not raw:
        raise TaxonomyError("empty label id")
    parts = raw.split(".")
    if len(parts) > MAX_DEPTH:
        raise TaxonomyError(f"label id {raw!r} has more than {MAX_DEPTH} components")
    path = []
    for part in parts:
        if not (part.isascii() and part.isdigit()) or str(int(part)) != part:
            raise TaxonomyError(
                f"malformed label id {raw!r}: component {part!r} is not a"
                " canonical non-negative integer"
            )
        path.append(int(part))
    return EneLabel(id=raw, path=tuple(path), level=len(parts))


@dataclass
class LevelTargets:
    """Multi-hot ground-truth vectors for levels 2..4, ancestor-closed."""

    y2: np.ndarray
    y3: np.ndarray
    y4: np.ndarray

    def by_level(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.y2, self.y3, self.y4)


class Taxonomy:
    """Immutable, validated label tree with per-level positional indexing.

    Positions within a level follow definition-file order, so they are
    stable across runs given the same input.  Safe for concurrent reads.
    """

    def __init__(self, labels: Iterable[EneLabel]):
        self._labels: tuple[EneLabel, ...] = tuple(labels)
        if not self._labels:
            raise TaxonomyError("empty taxonomy definition")
        by_level: tuple[list[EneLabel], ...] = ([], [], [], [])
        by_id: dict[str, EneLabel] = {}
        index: dict[str, tuple[int, int]] = {}
        for label in self._labels:
            if label.id in by_id:
                raise TaxonomyError(f"duplicate label id {label.id!r}")
            by_id[label.id] = label
            level_list = by_level[label.level - 1]
            index[label.id] = (label.level, len(level_list))
            level_list.append(label)
        for label in self._labels:
            if label.level > 1:
                parent_id = format_label_id(label.path[:-1])
                if parent_id not in by_id:
                    raise TaxonomyError(
                        f"orphan label {label.id!r}: ancestor {parent_id!r} is not defined"
                    )
        self._by_level = tuple(tuple(level) for level in by_level)
        self._by_id = by_id
        self._index = index

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label_id: str) -> bool:
        return label_id in self._by_id

    def __iter__(self) -> Iterator[EneLabel]:
        return iter(self._labels)

    def labels(self, level: int) -> tuple[EneLabel, ...]:
        if not 1 <= level <= MAX_DEPTH:
            raise TaxonomyError(f"level {level} outside [1, {MAX_DEPTH}]")
        return self._by_level[level - 1]

    def level_sizes(self) -> tuple[int, int, int, int]:
        return tuple(len(level) for level in self._by_level)  # type: ignore[return-value]

    def vector_sizes(self) -> tuple[int, int, int]:
        """Dimensions of the level-2..4 target vectors."""
        sizes = self.level_sizes()
        return sizes[1], sizes[2], sizes[3]

    def get(self, label_id: str) -> EneLabel:
        try:
            return self._by_id[label_id]
        except KeyError:
            raise TaxonomyError(f"unknown label id {label_id!r}") from None

    def position(self, label_id: str) -> tuple[int, int]:
        """(level, position-within-level) of a label."""
        self.get(label_id)
        return self._index[label_id]

    def parent(self, label_id: str) -> EneLabel | None:
        label = self.get(label_id)
        if label.level == 1:
            return None
        return self._by_id[format_label_id(label.path[:-1])]

    def ancestors(self, label_id: str) -> list[EneLabel]:
        """Strict prefixes of a label, ordered shallow to deep."""
        label = self.get(label_id)
        return [self._by_id[format_label_id(label.path[:d])] for d in range(1, label.level)]

    def assignable_level4(self) -> tuple[EneLabel, ...]:
        """Level-4 labels eligible for prediction (the fine-grained space)."""
        return tuple(label for label in self._by_level[3] if label.assignable)

    def assignable_mask(self) -> np.ndarray:
        """Boolean mask over level-4 positions marking assignable labels."""
        return np.array([label.assignable for label in self._by_level[3]], dtype=bool)

    def content_hash(self) -> int:
        """64-bit hash of (id, assignable) in definition order.

        Checkpoints embed this value; loading against a different taxonomy
        fails fast instead of silently misaligning positions.
        """
        payload = "\n".join(f"{lab.id}\t{int(lab.assignable)}" for lab in self._labels)
        return fnv1a64(payload)


def load_taxonomy(source: str | TextIO | Iterable[str]) -> Taxonomy:
    """Load and validate a taxonomy definition.

    One record per line, tab-separated: ``id<TAB>assignable(0|1)<TAB>name``;
    the assignable and name fields may be omitted (assignable defaults to 1).
    Lines starting with ``#`` and blank lines are ignored.  Missing
    intermediate ancestors are an error, never auto-created.
    """
    labels = []
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) > 3:
            raise TaxonomyError(f"taxonomy line {lineno}: expected at most 3 fields")
        label = parse_label_id(fields[0].strip())
        assignable = True
        if len(fields) >= 2 and fields[1].strip():
            flag = fields[1].strip()
            if flag not in ("0", "1"):
                raise TaxonomyError(
                    f"taxonomy line {lineno}: assignable flag must be 0 or 1, got {flag!r}"
                )
            assignable = flag == "1"
        name = fields[2].strip() if len(fields) == 3 and fields[2].strip() else None
        labels.append(dataclasses.replace(label, name=name, assignable=assignable))
    return Taxonomy(labels)


def _lines(source: str | TextIO | Iterable[str]) -> Iterator[str]:
    if isinstance(source, str):
        with open(source, encoding="utf-8") as handle:
            yield from handle
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        yield from source  # type: ignore[misc]
    else:
        yield from source


def encode_targets(label_ids: Iterable[str], taxonomy: Taxonomy) -> LevelTargets:
    """Encode a gold label set as ancestor-closed per-level target vectors.

    Each label activates its own position (when its level is 2 or deeper)
    and every ancestor position down to level 2.  Level-1 labels contribute
    nothing, matching the rule that level 1 is never vectorized.
    """
    d2, d3, d4 = taxonomy.vector_sizes()
    vectors = (np.zeros(d2), np.zeros(d3), np.zeros(d4))
    for raw in label_ids:
        label = taxonomy.get(raw)
        for depth in range(2, label.level + 1):
            prefix = format_label_id(label.path[:depth])
            level, pos = taxonomy.position(prefix)
            vectors[level - 2][pos] = 1.0
    return LevelTargets(*vectors)
