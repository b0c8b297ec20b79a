"""Aggregate corpus analyses: component distributions, metadata cross-tabs,
and the narrative-vs-generic-frame intersection.

All tables use stable class orderings and plain counts, so the same
corpus and labels always reproduce bit-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import ArticleRecord, LEANINGS, NarframeError
from .metrics import entropy_bits

METADATA_FIELDS = ("leaning", "outlet", "year")


class NoLabels(NarframeError):
    """No labeled articles available for the requested slot or field."""


class UnknownMetadataField(NarframeError):
    """The cross-tab field is not an article metadata field."""


class NoGenericFrames(NarframeError):
    """No article in the corpus carries a non-empty generic-frame set."""


@dataclass(frozen=True)
class DistributionTable:
    classes: tuple[str, ...]
    counts: tuple[int, ...]
    total: int

    def proportions(self) -> tuple[float, ...]:
        return tuple(c / self.total for c in self.counts)

    def rows(self) -> list[tuple[str, int, float]]:
        return [
            (cls, count, count / self.total)
            for cls, count in zip(self.classes, self.counts)
        ]


def distribution(labels: Sequence[str], classes: Sequence[str]) -> DistributionTable:
    """Counts and proportions per class in the given order.

    Classes never observed keep a zero row, so restricted vocabularies
    (e.g. a story value absent from a dataset) stay visible.
    """
    if not labels:
        raise NoLabels("no labels to aggregate")
    known = set(classes)
    unknown = sorted({l for l in labels if l not in known})
    if unknown:
        raise ValueError(f"labels outside the class list: {unknown}")
    counts = tuple(sum(1 for l in labels if l == cls) for cls in classes)
    return DistributionTable(classes=tuple(classes), counts=counts, total=len(labels))


@dataclass(frozen=True)
class CrosstabTable:
    """Slot x metadata contingency counts with margins and both row- and
    column-normalized shares (the full-corpus normalization question is
    left to the reader by emitting both)."""

    row_classes: tuple[str, ...]
    col_values: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]
    excluded: int  # articles lacking the metadata field

    def row_margins(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    def col_margins(self) -> tuple[int, ...]:
        return tuple(sum(row[j] for row in self.counts) for j in range(len(self.col_values)))

    def total(self) -> int:
        return sum(self.row_margins())

    def row_shares(self) -> tuple[tuple[float, ...], ...]:
        shares = []
        for row in self.counts:
            total = sum(row)
            shares.append(tuple(c / total if total else 0.0 for c in row))
        return tuple(shares)

    def col_shares(self) -> tuple[tuple[float, ...], ...]:
        margins = self.col_margins()
        return tuple(
            tuple(row[j] / margins[j] if margins[j] else 0.0 for j in range(len(row)))
            for row in self.counts
        )


def _metadata_value(article: ArticleRecord, field: str) -> str | None:
    if field == "year":
        return str(article.year) if article.year is not None else None
    value = getattr(article, field)
    return value if value else None


def crosstab(
    articles: Sequence[ArticleRecord],
    labels_by_article: Mapping[str, str],
    slot_classes: Sequence[str],
    metadata_field: str,
) -> CrosstabTable:
    """Cross-tabulate per-article labels against an article metadata field.

    Articles without a label or without the metadata value are excluded
    and counted. Leaning columns use the left-to-right political order;
    other fields sort their observed values.
    """
    if metadata_field not in METADATA_FIELDS:
        raise UnknownMetadataField(metadata_field)
    pairs = []
    excluded = 0
    for article in articles:
        label = labels_by_article.get(article.id)
        if label is None:
            continue
        value = _metadata_value(article, metadata_field)
        if value is None:
            excluded += 1
            continue
        pairs.append((label, value))
    if not pairs:
        raise NoLabels(f"no article carries both a label and {metadata_field!r}")

    observed = {value for _, value in pairs}
    if metadata_field == "leaning":
        col_values = tuple(v for v in LEANINGS if v in observed)
    else:
        col_values = tuple(sorted(observed))
    row_index = {cls: i for i, cls in enumerate(slot_classes)}
    col_index = {val: j for j, val in enumerate(col_values)}
    unknown = sorted({label for label, _ in pairs if label not in row_index})
    if unknown:
        raise ValueError(f"labels outside the class list: {unknown}")
    grid = [[0] * len(col_values) for _ in slot_classes]
    for label, value in pairs:
        grid[row_index[label]][col_index[value]] += 1
    return CrosstabTable(
        row_classes=tuple(slot_classes),
        col_values=col_values,
        counts=tuple(tuple(row) for row in grid),
        excluded=excluded,
    )


@dataclass(frozen=True)
class IntersectionTable:
    """Narrative frames against multi-label generic frames.

    Each article contributes one count per generic frame it carries; the
    entropy column (bits) quantifies how spread each narrative is across
    the generic frames.
    """

    narratives: tuple[str, ...]
    generic: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]
    skipped: int  # articles without generic frames or without a narrative label

    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    def entropy(self) -> tuple[float, ...]:
        return tuple(entropy_bits(row) for row in self.counts)


def frame_intersection(
    articles: Sequence[ArticleRecord],
    narrative_by_article: Mapping[str, str],
    narratives: Sequence[str],
    generic: Sequence[str],
) -> IntersectionTable:
    if not any(article.generic_frames for article in articles):
        raise NoGenericFrames("no article carries generic-frame metadata")
    row_index = {n: i for i, n in enumerate(narratives)}
    col_index = {g: j for j, g in enumerate(generic)}
    grid = [[0] * len(generic) for _ in narratives]
    skipped = 0
    for article in articles:
        label = narrative_by_article.get(article.id)
        frames = article.generic_frames
        if label is None or not frames:
            skipped += 1
            continue
        if label not in row_index:
            raise ValueError(f"narrative label {label!r} outside the class list")
        for frame in sorted(frames):
            grid[row_index[label]][col_index[frame]] += 1
    return IntersectionTable(
        narratives=tuple(narratives),
        generic=tuple(generic),
        counts=tuple(tuple(row) for row in grid),
        skipped=skipped,
    )
