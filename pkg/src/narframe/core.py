"""Core vocabularies and record types for narrative frame analysis.

A narrative frame is described by six component slots: three character
roles (hero, villain, victim) drawn from a stakeholder taxonomy, the focal
role, a four-way conflict stance, and a cultural story. This module owns
the closed vocabularies for those slots, the composite structure and
corpus record types, label parsing/rendering, and the JSON-lines corpus
and plain-text taxonomy file formats.

Role slots use the single sentinel label ``"None"`` (the `NONE` constant)
instead of optional typing, because model outputs emit that literal string
for absent characters.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable


class NarframeError(Exception):
    """Base class for all errors raised by this package."""


class UnknownLabel(NarframeError):
    """A raw label is not in the vocabulary of its component slot."""

    def __init__(self, raw: str, slot: str):
        super().__init__(f"unknown label {raw!r} for slot {slot!r}")
        self.raw = raw
        self.slot = slot


class ParseError(NarframeError):
    """A structured text file could not be parsed."""

    def __init__(self, message: str, line_no: int | None = None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"{message}{where}")
        self.line_no = line_no


class EmptyInput(NarframeError):
    """An operation that needs at least one item received none."""


# Sentinel for an unfilled character role. Kept as the literal string used
# on the wire and in corpus files.
NONE = "None"

ROLE_SLOTS = ("hero", "villain", "victim")
SCALAR_SLOTS = ("focus", "conflict", "story")
COMPONENT_SLOTS = ROLE_SLOTS + SCALAR_SLOTS

LEANINGS = ("left", "left-center", "center", "right-center", "right")
GENERIC_FRAMES = ("Conflict", "Economic", "HumanInterest", "Morality", "Resolution")


class Focus(str, Enum):
    """Which character role the article centers on."""

    HERO = "HERO"
    VILLAIN = "VILLAIN"
    VICTIM = "VICTIM"


class ConflictStance(str, Enum):
    """Four-way position toward the issue: fuel/prevent x conflict/resolution."""

    FUEL_CONFLICT = "FUEL_CONFLICT"
    FUEL_RESOLUTION = "FUEL_RESOLUTION"
    PREVENT_CONFLICT = "PREVENT_CONFLICT"
    PREVENT_RESOLUTION = "PREVENT_RESOLUTION"


class CulturalStory(str, Enum):
    """Grid-group schema the frame evokes.

    Task configurations may restrict the admissible subset (the climate
    experiments exclude FATALIST); the restriction lives in the task's
    label space, not here.
    """

    FATALIST = "FATALIST"
    HIERARCHICAL = "HIERARCHICAL"
    INDIVIDUALISTIC = "INDIVIDUALISTIC"
    EGALITARIAN = "EGALITARIAN"


@dataclass(frozen=True)
class TaxonomyClass:
    label: str
    description: str


@dataclass(frozen=True)
class Taxonomy:
    """An ordered, closed set of stakeholder categories for one topic."""

    name: str
    topic: str
    classes: tuple[TaxonomyClass, ...]

    def __post_init__(self):
        if not self.classes:
            raise ValueError("taxonomy must have at least one class")
        seen = set()
        for cls in self.classes:
            if not cls.label or cls.label == NONE:
                raise ValueError(f"invalid taxonomy label {cls.label!r}")
            if cls.label in seen:
                raise ValueError(f"duplicate taxonomy label {cls.label!r}")
            seen.add(cls.label)

    def labels(self) -> tuple[str, ...]:
        return tuple(cls.label for cls in self.classes)

    def has(self, label: str) -> bool:
        return any(cls.label == label for cls in self.classes)

    def description(self, label: str) -> str:
        for cls in self.classes:
            if cls.label == label:
                return cls.description
        raise KeyError(label)


def canon_label(raw: str) -> str:
    """Canonical label form: uppercase, whitespace runs become underscores."""
    return re.sub(r"\s+", "_", raw.strip()).upper()


def parse_label(slot: str, raw: str, taxonomy: Taxonomy | None = None):
    """Parse a raw string into the canonical value for a component slot.

    Case-insensitive and whitespace-tolerant. For role slots the literal
    strings "None"/"null"/"" map to `NONE`; any other value must be a
    taxonomy label. Scalar slots return their enum members.

    Raises UnknownLabel when the value is outside the slot's vocabulary,
    and ValueError for an unknown slot name.
    """
    if slot in ROLE_SLOTS:
        if taxonomy is None:
            raise ValueError("role slots require a taxonomy")
        if raw is None or raw.strip().lower() in ("", "none", "null"):
            return NONE
        label = canon_label(raw)
        if taxonomy.has(label):
            return label
        raise UnknownLabel(raw, slot)
    if slot == "focus":
        enum_type = Focus
    elif slot == "conflict":
        enum_type = ConflictStance
    elif slot == "story":
        enum_type = CulturalStory
    else:
        raise ValueError(f"unknown component slot {slot!r}")
    try:
        return enum_type(canon_label(raw))
    except ValueError:
        raise UnknownLabel(raw, slot) from None


def render_label(value) -> str:
    """Inverse of parse_label: canonical wire string for a component value."""
    if value is None:
        return NONE
    if isinstance(value, Enum):
        return value.value
    return str(value)


@dataclass(frozen=True)
class NarrativeStructure:
    """One article's component tuple.

    Scalar slots may be absent (None) in predicted structures; annotated
    gold structures carry all six slots.
    """

    hero: str = NONE
    villain: str = NONE
    victim: str = NONE
    focus: Focus | None = None
    conflict: ConflictStance | None = None
    story: CulturalStory | None = None

    def role(self, slot: str) -> str:
        if slot not in ROLE_SLOTS:
            raise ValueError(f"not a role slot: {slot!r}")
        return getattr(self, slot)

    def has_character(self) -> bool:
        return any(getattr(self, slot) != NONE for slot in ROLE_SLOTS)

    def to_dict(self) -> dict:
        out: dict = {slot: getattr(self, slot) for slot in ROLE_SLOTS}
        for slot in SCALAR_SLOTS:
            value = getattr(self, slot)
            if value is not None:
                out[slot] = value.value
        return out

    @classmethod
    def from_dict(cls, data: dict, taxonomy: Taxonomy) -> "NarrativeStructure":
        kwargs = {}
        for slot in ROLE_SLOTS:
            kwargs[slot] = parse_label(slot, data.get(slot, NONE), taxonomy)
        for slot in SCALAR_SLOTS:
            if data.get(slot) is not None:
                kwargs[slot] = parse_label(slot, data[slot])
        return cls(**kwargs)


@dataclass(frozen=True)
class Violation:
    """A named invariant failure. Violations are data, not exceptions."""

    code: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.code}: {self.detail}" if self.detail else self.code


def validate_structure(s: NarrativeStructure, gold: bool = False) -> list[Violation]:
    """Check structure invariants; returns an empty list iff all hold.

    A structure describing a narrative frame needs at least one filled
    role. Gold (annotated) structures must additionally have all scalar
    slots present and a non-empty focal role; predicted structures may
    be degraded.
    """
    violations = []
    if not s.has_character():
        violations.append(Violation("NoPrototypicalCharacter", "all role slots are None"))
    if gold:
        for slot in SCALAR_SLOTS:
            if getattr(s, slot) is None:
                violations.append(Violation("MissingComponent", f"gold structure lacks {slot}"))
        if s.focus is not None and s.role(s.focus.value.lower()) == NONE:
            violations.append(
                Violation("FocalRoleEmpty", f"focus={s.focus.value} but that role is None")
            )
    return violations


@dataclass(frozen=True)
class ArticleRecord:
    """One corpus unit: text plus outlet metadata and optional gold labels."""

    id: str
    title: str
    text: str
    outlet: str = ""
    leaning: str | None = None
    year: int | None = None
    gold: NarrativeStructure | None = None
    gold_narrative: str | None = None
    generic_frames: frozenset[str] | None = None

    def to_dict(self) -> dict:
        out: dict = {"id": self.id, "title": self.title, "text": self.text}
        if self.outlet:
            out["outlet"] = self.outlet
        if self.leaning is not None:
            out["leaning"] = self.leaning
        if self.year is not None:
            out["year"] = self.year
        if self.gold is not None:
            out["gold"] = self.gold.to_dict()
        if self.gold_narrative is not None:
            out["gold_narrative"] = self.gold_narrative
        if self.generic_frames is not None:
            out["generic_frames"] = sorted(self.generic_frames)
        return out


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's label for one component slot of one article."""

    article_id: str
    annotator_id: str
    slot: str
    label: str


def parse_taxonomy(text: str, name: str = "", topic: str = "") -> Taxonomy:
    """Parse the plain-text taxonomy format.

    Lines are either ``name: <id>`` / ``topic: <free text>`` metadata or
    one ``LABEL: one-line description`` per class, in file order. ``#``
    starts a comment.
    """
    classes = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if ":" not in stripped:
            raise ParseError(f"expected 'LABEL: description', got {stripped!r}", line_no)
        key, _, value = stripped.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "name":
            name = value
        elif key == "topic":
            topic = value
        else:
            classes.append(TaxonomyClass(label=key, description=value))
    if not classes:
        raise ParseError("taxonomy file defines no classes")
    try:
        return Taxonomy(name=name, topic=topic, classes=tuple(classes))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def dump_taxonomy(taxonomy: Taxonomy) -> str:
    lines = [f"name: {taxonomy.name}", f"topic: {taxonomy.topic}", ""]
    lines += [f"{cls.label}: {cls.description}" for cls in taxonomy.classes]
    return "\n".join(lines) + "\n"


def load_taxonomy(path: str | Path) -> Taxonomy:
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def save_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    Path(path).write_text(dump_taxonomy(taxonomy), encoding="utf-8")


_ARTICLE_FIELDS = {
    "id", "title", "text", "outlet", "leaning", "year",
    "gold", "gold_narrative", "generic_frames",
}


def article_from_dict(
    data: dict,
    taxonomy: Taxonomy,
    field_map: dict[str, str] | None = None,
    line_no: int | None = None,
) -> ArticleRecord:
    """Build an ArticleRecord from a JSON object.

    `field_map` maps our field names to the source file's names, so
    corpora with a different schema can be ingested without rewriting
    (e.g. ``{"text": "body", "id": "article_id"}``).

    Unknown leaning values are dropped rather than failing ingestion;
    unknown generic-frame labels are an error.
    """
    def get(name: str):
        source = field_map.get(name, name) if field_map else name
        return data.get(source)

    article_id = get("id")
    text = get("text")
    if article_id is None or str(article_id) == "":
        raise ParseError("article record lacks an id", line_no)
    if not text:
        raise ParseError(f"article {article_id!r} has empty text", line_no)

    leaning = get("leaning")
    if leaning is not None and leaning not in LEANINGS:
        leaning = None

    year = get("year")
    if year is not None:
        try:
            year = int(year)
        except (TypeError, ValueError) as exc:
            raise ParseError(f"article {article_id!r} has non-integer year {year!r}", line_no) from exc

    gold = None
    if get("gold") is not None:
        try:
            gold = NarrativeStructure.from_dict(get("gold"), taxonomy)
        except UnknownLabel as exc:
            raise ParseError(f"article {article_id!r}: {exc}", line_no) from exc

    generic = get("generic_frames")
    if generic is not None:
        unknown = set(generic) - set(GENERIC_FRAMES)
        if unknown:
            raise ParseError(
                f"article {article_id!r} has unknown generic frames {sorted(unknown)}", line_no
            )
        generic = frozenset(generic)

    return ArticleRecord(
        id=str(article_id),
        title=str(get("title") or ""),
        text=str(text),
        outlet=str(get("outlet") or ""),
        leaning=leaning,
        year=year,
        gold=gold,
        gold_narrative=get("gold_narrative"),
        generic_frames=generic,
    )


def read_corpus(
    path: str | Path,
    taxonomy: Taxonomy,
    field_map: dict[str, str] | None = None,
) -> list[ArticleRecord]:
    """Read a JSON-lines corpus, one ArticleRecord per line.

    Raises ParseError on malformed lines, duplicate ids, or empty text.
    """
    articles = []
    seen_ids = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            article = article_from_dict(data, taxonomy, field_map, line_no)
            if article.id in seen_ids:
                raise ParseError(f"duplicate article id {article.id!r}", line_no)
            seen_ids.add(article.id)
            articles.append(article)
    return articles


def write_corpus(articles: Iterable[ArticleRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for article in articles:
            handle.write(json.dumps(article.to_dict(), ensure_ascii=False) + "\n")


def read_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Read annotator labels from JSON-lines with fields
    article_id, annotator_id, slot, label."""
    records = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line_no) from exc
            try:
                records.append(
                    AnnotationRecord(
                        article_id=str(data["article_id"]),
                        annotator_id=str(data["annotator_id"]),
                        slot=str(data["slot"]),
                        label=str(data["label"]),
                    )
                )
            except KeyError as exc:
                raise ParseError(f"annotation record missing field {exc}", line_no) from exc
    return records
