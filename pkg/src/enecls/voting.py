"""Stage 3: cross-lingual voting over interlanguage-linked pages.

Linked pages describe the same entity, so they should end up with the same
categories.  Each linked page with a prediction casts its label set as a
ballot; the ballots are flattened, labels tallied, and every label whose
count reaches the mean count over distinct labels is chosen for the whole
group.  The mean comparison runs in exact rational arithmetic, so boundary
ties never depend on floating point.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .corpus import LinkGroup
from .errors import DataError
from .pipeline import PredictionSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VoteInput:
    """Ballots of one link group: (language, predicted labels) per page."""

    group_id: str
    ballots: tuple[tuple[str, frozenset[str]], ...]


@dataclass
class VoteResult:
    group_id: str
    chosen: set[str]
    tally: dict[str, int]
    mean: Fraction


@dataclass
class VotingStats:
    groups_voted: int = 0
    members_updated: int = 0
    members_without_prediction: int = 0


def vote(vote_input: VoteInput, *, strict: bool = False) -> VoteResult:
    """Select the labels whose tally reaches the mean tally.

    With k distinct labels and counts c_1..c_k, label l is chosen when
    c_l >= (1/k) * sum(c_j).  ``strict`` switches the comparison to a
    strict inequality, which can leave the chosen set empty when all
    counts tie.
    """
    if not vote_input.ballots:
        raise DataError(f"group {vote_input.group_id!r} has no ballots")
    tally: Counter[str] = Counter()
    for _, labels in vote_input.ballots:
        if not labels:
            raise DataError(f"group {vote_input.group_id!r} has an empty ballot")
        tally.update(labels)
    mean = Fraction(sum(tally.values()), len(tally))
    if strict:
        chosen = {label for label, count in tally.items() if count > mean}
    else:
        chosen = {label for label, count in tally.items() if count >= mean}
    return VoteResult(group_id=vote_input.group_id, chosen=chosen, tally=dict(tally), mean=mean)


def apply_voting(
    groups: Iterable[LinkGroup],
    predictions: Sequence[PredictionSet],
    *,
    strict: bool = False,
    advisory: bool = False,
    stats: VotingStats | None = None,
) -> list[PredictionSet]:
    """Rewrite linked pages' label sets with their group's vote.

    Pages in no group, groups with fewer than two predicted members, and
    (in strict mode) groups whose vote comes back empty keep their
    monolingual predictions.  ``advisory`` intersects the voted labels into
    each member's own set instead of overwriting, keeping the original set
    when the intersection is empty.
    """
    if stats is None:
        stats = VotingStats()
    by_key = {pred.key: pred for pred in predictions}
    replacements: dict[tuple[str, str], PredictionSet] = {}
    for group in groups:
        members = []
        for lang, page_id in group.members.items():
            pred = by_key.get((lang, page_id))
            if pred is None:
                stats.members_without_prediction += 1
                log.warning(
                    "group %s member %s/%s has no prediction; skipped", group.group_id, lang, page_id
                )
            else:
                members.append(pred)
        if len(members) < 2:
            continue
        ballots = tuple((p.language, frozenset(p.labels)) for p in members)
        result = vote(VoteInput(group_id=group.group_id, ballots=ballots), strict=strict)
        if not result.chosen:
            continue
        stats.groups_voted += 1
        for pred in members:
            if advisory:
                labels = pred.labels & result.chosen or set(pred.labels)
            else:
                labels = set(result.chosen)
            replacements[pred.key] = PredictionSet(
                language=pred.language,
                page_id=pred.page_id,
                labels=labels,
                scores={k: v for k, v in pred.scores.items() if k in labels},
                fallback=pred.fallback,
                voted=True,
                tally=dict(result.tally),
            )
            stats.members_updated += 1
    return [replacements.get(pred.key, pred) for pred in predictions]
