"""Maps narrative structures to catalog frames and adjudicates annotations.

A frame is a candidate for a structure iff every slot is compatible:
a role slot is compatible when the signature marks it ANY or the
structure's value is one of the admissible members (an unfilled role
never satisfies a mandatory slot); focus/conflict/story must be equal.
Candidates are ranked by specificity (number of satisfied non-ANY role
slots plus the number of scalar slots checked) with catalog order as
the tie-break, so results are deterministic and auditable.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator

from .catalog import ANY, Catalog
from .core import (
    COMPONENT_SLOTS,
    NONE,
    ROLE_SLOTS,
    SCALAR_SLOTS,
    AnnotationRecord,
    ConflictStance,
    CulturalStory,
    EmptyInput,
    Focus,
    NarframeError,
    NarrativeStructure,
    Taxonomy,
)

UNIQUE = "UNIQUE"
TIED = "TIED"
NO_MATCH = "NO_MATCH"

# Slot-trace statuses.
MATCHED = "matched"
ANY_SLOT = "any"
PARTIAL = "partial"  # scalar slot absent in a predicted structure, not checked

GOLD = "gold"
PREDICTED = "predicted"

DEFAULT_ENUMERATION_BOUND = 200_000


class SpaceTooLarge(NarframeError):
    """The structure space exceeds the configured enumeration bound."""

    def __init__(self, size: int, bound: int):
        super().__init__(f"structure space has {size} points, bound is {bound}")
        self.size = size
        self.bound = bound


@dataclass(frozen=True)
class SlotMatch:
    slot: str
    status: str


@dataclass(frozen=True)
class Candidate:
    frame_id: str
    specificity: int
    slot_trace: tuple[SlotMatch, ...]


@dataclass(frozen=True)
class MatchResult:
    candidates: tuple[Candidate, ...]
    verdict: str

    def best(self) -> Candidate | None:
        return self.candidates[0] if self.candidates else None


@lru_cache(maxsize=16)
def _scalar_index(catalog: Catalog) -> dict:
    """Frame indices bucketed by their (focus, conflict, story) triple."""
    index: dict[tuple, tuple[int, ...]] = {}
    buckets: dict[tuple, list[int]] = {}
    for idx, frame in enumerate(catalog.frames):
        buckets.setdefault((frame.focus, frame.conflict, frame.story), []).append(idx)
    for key, indices in buckets.items():
        index[key] = tuple(indices)
    return index


def match_structure(s: NarrativeStructure, catalog: Catalog, mode: str = GOLD) -> MatchResult:
    """Match one structure against the catalog.

    In gold mode all six slots must be present. In predicted mode absent
    scalar slots are skipped (marked `partial` in the slot trace) and
    specificity drops accordingly; degraded structures never error, they
    simply match fewer or no frames.
    """
    if mode not in (GOLD, PREDICTED):
        raise ValueError(f"unknown match mode {mode!r}")
    present_scalars = [slot for slot in SCALAR_SLOTS if getattr(s, slot) is not None]
    if mode == GOLD and len(present_scalars) != len(SCALAR_SLOTS):
        missing = sorted(set(SCALAR_SLOTS) - set(present_scalars))
        raise ValueError(f"gold matching requires all six slots; missing {missing}")

    if len(present_scalars) == len(SCALAR_SLOTS):
        indices: Iterable[int] = _scalar_index(catalog).get((s.focus, s.conflict, s.story), ())
    else:
        indices = range(len(catalog.frames))

    ranked: list[tuple[int, Candidate]] = []
    for idx in indices:
        frame = catalog.frames[idx]
        status: dict[str, str] = {}
        specificity = 0
        compatible = True
        for slot in SCALAR_SLOTS:
            value = getattr(s, slot)
            if value is None:
                status[slot] = PARTIAL
                continue
            if getattr(frame, slot) != value:
                compatible = False
                break
            status[slot] = MATCHED
            specificity += 1
        if not compatible:
            continue
        for slot in ROLE_SLOTS:
            members = frame.role_set(slot)
            if members is ANY:
                status[slot] = ANY_SLOT
                continue
            value = s.role(slot)
            if value == NONE or value not in members:
                compatible = False
                break
            status[slot] = MATCHED
            specificity += 1
        if not compatible:
            continue
        trace = tuple(SlotMatch(slot, status[slot]) for slot in COMPONENT_SLOTS)
        ranked.append((idx, Candidate(frame.frame_id, specificity, trace)))

    ranked.sort(key=lambda pair: (-pair[1].specificity, pair[0]))
    candidates = tuple(candidate for _, candidate in ranked)
    if not candidates:
        verdict = NO_MATCH
    else:
        top = candidates[0].specificity
        at_top = sum(1 for c in candidates if c.specificity == top)
        verdict = UNIQUE if at_top == 1 else TIED
    return MatchResult(candidates=candidates, verdict=verdict)


def structure_space(
    taxonomy: Taxonomy,
    restrict: dict[str, Iterable] | None = None,
) -> dict[str, tuple]:
    """Per-slot value domains for exhaustive enumeration."""
    domains: dict[str, tuple] = {}
    for slot in ROLE_SLOTS:
        domains[slot] = (NONE,) + taxonomy.labels()
    domains["focus"] = tuple(Focus)
    domains["conflict"] = tuple(ConflictStance)
    domains["story"] = tuple(CulturalStory)
    if restrict:
        for slot, values in restrict.items():
            if slot not in domains:
                raise ValueError(f"unknown component slot {slot!r}")
            values = tuple(values)
            outside = [v for v in values if v not in domains[slot]]
            if outside:
                raise ValueError(f"restriction values outside {slot} domain: {outside}")
            domains[slot] = values
    return domains


def enumerate_matches(
    catalog: Catalog,
    restrict: dict[str, Iterable] | None = None,
    bound: int = DEFAULT_ENUMERATION_BOUND,
) -> Iterator[tuple[NarrativeStructure, MatchResult]]:
    """Exhaustively match the (restricted) structure space in gold mode.

    The climate space is (10+1)^3 * 3 * 4 * 4 = 63,888 structures. Raises
    SpaceTooLarge before yielding anything when the space exceeds `bound`.
    """
    domains = structure_space(catalog.taxonomy, restrict)
    size = 1
    for values in domains.values():
        size *= len(values)
    if size > bound:
        raise SpaceTooLarge(size, bound)

    def generate() -> Iterator[tuple[NarrativeStructure, MatchResult]]:
        slots = list(COMPONENT_SLOTS)
        for combo in itertools.product(*(domains[slot] for slot in slots)):
            structure = NarrativeStructure(**dict(zip(slots, combo)))
            yield structure, match_structure(structure, catalog, mode=GOLD)

    return generate()


@dataclass(frozen=True)
class MatchStatistics:
    """Verdict counts over an enumerated structure space.

    `tied_examples` lists up to `MAX_TIED_EXAMPLES` structurally ambiguous
    structures with the frames they tie between, for catalog diagnostics.
    """

    total: int
    unique: int
    tied: int
    no_match: int
    unique_by_frame: dict[str, int]
    tied_examples: tuple[tuple[NarrativeStructure, tuple[str, ...]], ...]


MAX_TIED_EXAMPLES = 20


def match_statistics(
    catalog: Catalog,
    restrict: dict[str, Iterable] | None = None,
    bound: int = DEFAULT_ENUMERATION_BOUND,
) -> MatchStatistics:
    """Summarize verdicts over the enumerated structure space."""
    total = unique = tied = no_match = 0
    by_frame: Counter = Counter()
    tied_examples: list[tuple[NarrativeStructure, tuple[str, ...]]] = []
    for structure, result in enumerate_matches(catalog, restrict, bound):
        total += 1
        if result.verdict == UNIQUE:
            unique += 1
            by_frame[result.candidates[0].frame_id] += 1
        elif result.verdict == TIED:
            tied += 1
            if len(tied_examples) < MAX_TIED_EXAMPLES:
                top = result.candidates[0].specificity
                frames = tuple(c.frame_id for c in result.candidates
                               if c.specificity == top)
                tied_examples.append((structure, frames))
        else:
            no_match += 1
    return MatchStatistics(total, unique, tied, no_match, dict(by_frame),
                           tuple(tied_examples))


@dataclass(frozen=True)
class Adjudication:
    """Majority-vote outcome for one article and slot.

    `label` is None when a tie could not be resolved by the designated
    expert annotator.
    """

    label: str | None
    support: int
    tie: bool


def adjudicate(
    records: list[AnnotationRecord],
    slot: str,
    expert_id: str | None = None,
) -> Adjudication:
    """Resolve multi-annotator labels for one article slot by majority vote.

    Ties are resolved by the expert annotator's label when it is among
    the tied labels; otherwise the adjudication is marked unresolved.
    """
    if not records:
        raise EmptyInput("no annotation records to adjudicate")
    article_ids = {r.article_id for r in records}
    slots = {r.slot for r in records}
    if len(article_ids) != 1 or slots != {slot}:
        raise ValueError("records must share one article_id and the requested slot")

    counts = Counter(r.label for r in records)
    top_support = max(counts.values())
    winners = [label for label, n in counts.items() if n == top_support]
    if len(winners) == 1:
        return Adjudication(label=winners[0], support=top_support, tie=False)

    if expert_id is not None:
        expert_labels = [r.label for r in records if r.annotator_id == expert_id]
        if expert_labels and expert_labels[0] in winners:
            return Adjudication(label=expert_labels[0], support=top_support, tie=True)
    return Adjudication(label=None, support=top_support, tie=True)
