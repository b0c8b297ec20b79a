"""Classification evaluation and inter-annotator agreement statistics.

Evaluation follows the macro-averaged F1 protocol over a fixed class
list; chance-corrected agreement ships in three flavors (Krippendorff's
alpha with missing-data handling, Cohen's kappa, Gwet's AC1) plus the
raw agreement rate. All computations are pure and deterministic.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from statistics import mean, pstdev
from typing import Sequence

from .core import AnnotationRecord, EmptyInput, NarframeError

# Reserved confusion-matrix column for parse failures and any prediction
# outside the scored class list.
FAILED = "FAILED"

ZERO_FILL = "zero"      # absent classes contribute F1 = 0
EXCLUDE_ABSENT = "exclude"  # absent classes are dropped from the average


class LengthMismatch(NarframeError):
    """Gold and predicted label sequences have different lengths."""


class UnknownClassInGold(NarframeError):
    """A gold label is not covered by the class list."""


class DegenerateTable(NarframeError):
    """Too few pairable values, or inconsistent zero expected disagreement."""


class DegenerateMarginals(NarframeError):
    """Chance agreement is 1 while observed agreement is not."""


class SingleClassVocabulary(NarframeError):
    """Gwet's AC1 needs at least two classes."""


def _check_aligned(gold: Sequence, pred: Sequence) -> None:
    if len(gold) != len(pred):
        raise LengthMismatch(f"{len(gold)} gold labels vs {len(pred)} predictions")


def _check_gold_classes(gold: Sequence[str], classes: Sequence[str]) -> None:
    known = set(classes)
    unknown = sorted({g for g in gold if g not in known})
    if unknown:
        raise UnknownClassInGold(f"gold labels outside class list: {unknown}")


@dataclass(frozen=True)
class ClassScore:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


def per_class_scores(
    gold: Sequence[str],
    pred: Sequence[str | None],
    classes: Sequence[str],
) -> list[ClassScore]:
    """Precision/recall/F1 per class; failed or out-of-space predictions
    never count as a positive prediction for any class."""
    _check_aligned(gold, pred)
    _check_gold_classes(gold, classes)
    scores = []
    for cls in classes:
        tp = sum(1 for g, p in zip(gold, pred) if g == cls and p == cls)
        fp = sum(1 for g, p in zip(gold, pred) if g != cls and p == cls)
        fn = sum(1 for g, p in zip(gold, pred) if g == cls and p != cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        scores.append(ClassScore(cls, precision, recall, f1, tp + fn))
    return scores


def macro_f1(
    gold: Sequence[str],
    pred: Sequence[str | None],
    classes: Sequence[str],
    absent_classes: str = ZERO_FILL,
) -> float:
    """Unweighted mean of per-class F1 over `classes`.

    With the default zero-fill convention, a class absent from both gold
    and predictions contributes F1 = 0; `absent_classes=EXCLUDE_ABSENT`
    averages only over classes that occur on either side.
    """
    scores = per_class_scores(gold, pred, classes)
    if absent_classes == EXCLUDE_ABSENT:
        predicted = set(p for p in pred if p is not None)
        scores = [s for s in scores if s.support > 0 or s.label in predicted]
    if not scores:
        return 0.0
    return sum(s.f1 for s in scores) / len(scores)


def most_frequent_baseline(gold: Sequence[str], classes: Sequence[str]) -> list[str]:
    """Constant predictions of the modal gold label, ties broken by class order."""
    if not gold:
        raise EmptyInput("cannot compute a baseline from no gold labels")
    _check_gold_classes(gold, classes)
    counts = Counter(gold)
    best = max(classes, key=lambda cls: (counts[cls], -classes.index(cls)))
    return [best] * len(gold)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Cross-tabulation of gold rows against predicted columns.

    Columns are `classes` plus a trailing reserved FAILED column that
    collects parse failures and out-of-space predictions.
    """

    classes: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    @property
    def columns(self) -> tuple[str, ...]:
        return self.classes + (FAILED,)

    def row_sums(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    def col_sums(self) -> tuple[int, ...]:
        return tuple(sum(row[j] for row in self.counts) for j in range(len(self.columns)))

    def total(self) -> int:
        return sum(self.row_sums())


def confusion(
    gold: Sequence[str],
    pred: Sequence[str | None],
    classes: Sequence[str],
) -> ConfusionMatrix:
    _check_aligned(gold, pred)
    _check_gold_classes(gold, classes)
    classes = tuple(classes)
    col_index = {cls: j for j, cls in enumerate(classes)}
    failed_col = len(classes)
    grid = [[0] * (len(classes) + 1) for _ in classes]
    row_index = {cls: i for i, cls in enumerate(classes)}
    for g, p in zip(gold, pred):
        j = col_index.get(p, failed_col) if p is not None else failed_col
        grid[row_index[g]][j] += 1
    return ConfusionMatrix(classes=classes, counts=tuple(tuple(row) for row in grid))


@dataclass(frozen=True)
class AgreementTable:
    """Item x annotator nominal label matrix; None marks a missing entry."""

    items: tuple[str, ...]
    annotators: tuple[str, ...]
    labels: tuple[tuple[str | None, ...], ...]

    def __post_init__(self):
        if len(self.annotators) < 2:
            raise ValueError("an agreement table needs at least two annotators")
        if len(self.labels) != len(self.items):
            raise ValueError("one label row per item required")
        for row in self.labels:
            if len(row) != len(self.annotators):
                raise ValueError("one label per annotator per row required")

    def column(self, annotator_id: str) -> tuple[str | None, ...]:
        idx = self.annotators.index(annotator_id)
        return tuple(row[idx] for row in self.labels)

    def paired(self, first: str, second: str) -> tuple[list[str], list[str]]:
        """Aligned label lists over items where both annotators labeled."""
        i = self.annotators.index(first)
        j = self.annotators.index(second)
        a, b = [], []
        for row in self.labels:
            if row[i] is not None and row[j] is not None:
                a.append(row[i])
                b.append(row[j])
        return a, b


def build_agreement_table(records: list[AnnotationRecord], slot: str) -> AgreementTable:
    """Assemble an AgreementTable for one slot from annotation records."""
    relevant = [r for r in records if r.slot == slot]
    if not relevant:
        raise EmptyInput(f"no annotation records for slot {slot!r}")
    items = sorted({r.article_id for r in relevant})
    annotators = sorted({r.annotator_id for r in relevant})
    cell: dict[tuple[str, str], str] = {}
    for r in relevant:
        key = (r.article_id, r.annotator_id)
        if key in cell and cell[key] != r.label:
            raise ValueError(f"conflicting labels for {key} in slot {slot!r}")
        cell[key] = r.label
    rows = tuple(
        tuple(cell.get((item, annotator)) for annotator in annotators) for item in items
    )
    return AgreementTable(items=tuple(items), annotators=tuple(annotators), labels=rows)


def krippendorff_alpha(table: AgreementTable) -> float:
    """Nominal Krippendorff's alpha via the coincidence-matrix formulation.

    Items with fewer than two non-missing labels are not pairable and do
    not contribute. Returns 1.0 when both observed and expected
    disagreement are zero (a single-label table).
    """
    coincidence: Counter = Counter()
    for row in table.labels:
        values = [v for v in row if v is not None]
        m = len(values)
        if m < 2:
            continue
        weight = 1.0 / (m - 1)
        for i, a in enumerate(values):
            for j, b in enumerate(values):
                if i != j:
                    coincidence[(a, b)] += weight
    if not coincidence:
        raise DegenerateTable("fewer than 2 pairable values")
    label_totals: Counter = Counter()
    for (a, _b), count in coincidence.items():
        label_totals[a] += count
    n = sum(label_totals.values())
    observed = sum(count for (a, b), count in coincidence.items() if a != b) / n
    expected = (
        sum(
            label_totals[a] * label_totals[b]
            for a in label_totals
            for b in label_totals
            if a != b
        )
        / (n * (n - 1))
    )
    if expected == 0.0:
        if observed == 0.0:
            return 1.0
        raise DegenerateTable("zero expected but nonzero observed disagreement")
    return 1.0 - observed / expected


def cohen_kappa(a: Sequence[str], b: Sequence[str]) -> float:
    """Cohen's kappa for two raters over aligned labels with no missing data."""
    _check_aligned(a, b)
    n = len(a)
    if n == 0:
        raise EmptyInput("no items to compare")
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    counts_a = Counter(a)
    counts_b = Counter(b)
    p_e = sum(counts_a[k] * counts_b.get(k, 0) for k in counts_a) / (n * n)
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise DegenerateMarginals("chance agreement is 1 but raters disagree")
    return (p_o - p_e) / (1.0 - p_e)


def gwet_ac1(a: Sequence[str], b: Sequence[str], classes: Sequence[str]) -> float:
    """Gwet's AC1, robust to skewed label marginals.

    Chance agreement uses the mean of the two raters' marginal
    proportions per class over the full class list.
    """
    classes = tuple(dict.fromkeys(classes))
    if len(classes) < 2:
        raise SingleClassVocabulary("AC1 needs at least two classes")
    _check_aligned(a, b)
    n = len(a)
    if n == 0:
        raise EmptyInput("no items to compare")
    known = set(classes)
    outside = sorted({x for x in list(a) + list(b) if x not in known})
    if outside:
        raise ValueError(f"labels outside the class list: {outside}")
    p_o = sum(1 for x, y in zip(a, b) if x == y) / n
    counts_a = Counter(a)
    counts_b = Counter(b)
    k = len(classes)
    p_e = sum(
        ((counts_a[c] / n + counts_b[c] / n) / 2)
        * (1 - (counts_a[c] / n + counts_b[c] / n) / 2)
        for c in classes
    ) / (k - 1)
    return (p_o - p_e) / (1.0 - p_e)


def agreement_rate(a: Sequence[str], b: Sequence[str]) -> float:
    """Proportion of items with equal labels."""
    _check_aligned(a, b)
    if not a:
        raise EmptyInput("no items to compare")
    return sum(1 for x, y in zip(a, b) if x == y) / len(a)


def expert_pairwise(
    table: AgreementTable,
    expert_id: str,
    classes: Sequence[str],
) -> dict[str, float]:
    """Average agreement of each non-expert annotator with the expert.

    Returns mean agreement rate, Cohen's kappa, and Gwet's AC1 over all
    annotator-expert pairs with at least one co-annotated item.
    """
    if expert_id not in table.annotators:
        raise ValueError(f"unknown expert annotator {expert_id!r}")
    rates, kappas, ac1s = [], [], []
    for annotator in table.annotators:
        if annotator == expert_id:
            continue
        a, b = table.paired(annotator, expert_id)
        if not a:
            continue
        rates.append(agreement_rate(a, b))
        kappas.append(cohen_kappa(a, b))
        ac1s.append(gwet_ac1(a, b, classes))
    if not rates:
        raise EmptyInput("no annotator shares items with the expert")
    return {
        "agreement_rate": mean(rates),
        "cohen_kappa": mean(kappas),
        "gwet_ac1": mean(ac1s),
    }


@dataclass(frozen=True)
class RunSummary:
    """Mean and spread of a score across repeated runs.

    The variance flag marks high (over 0.02) and very high (over 0.05)
    standard deviation with * and ** respectively.
    """

    mean: float
    std: float
    flag: str
    runs: int


def summarize_runs(scores: Sequence[float]) -> RunSummary:
    if not scores:
        raise EmptyInput("no run scores to summarize")
    spread = pstdev(scores) if len(scores) > 1 else 0.0
    flag = "**" if spread > 0.05 else "*" if spread > 0.02 else ""
    return RunSummary(mean=mean(scores), std=spread, flag=flag, runs=len(scores))


def entropy_bits(counts: Sequence[float]) -> float:
    """Shannon entropy in bits of a count vector; 0.0 for an empty row."""
    total = sum(counts)
    if total <= 0:
        return 0.0
    h = 0.0
    for c in counts:
        if c > 0:
            p = c / total
            h -= p * math.log2(p)
    return h
