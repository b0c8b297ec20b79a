"""Declarative catalog of narrative-frame signatures.

A frame signature fixes the admissible stakeholder sets for the three
character roles (or marks a role optional with ANY) and pins single
mandatory values for focus, conflict, and cultural story. The shipped
climate catalog carries sixteen frames from the climate communication
literature; the same file format supports new domains.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .core import (
    NONE,
    ConflictStance,
    CulturalStory,
    Focus,
    NarframeError,
    ParseError,
    ROLE_SLOTS,
    Taxonomy,
    UnknownLabel,
    Violation,
    parse_label,
    parse_taxonomy,
)

# Admissible-set value marking an optional role slot.
ANY = None

_GROUP_FOCUS = {
    "hero-focused": Focus.HERO,
    "villain-focused": Focus.VILLAIN,
    "victim-focused": Focus.VICTIM,
}

_BLOCK_KEYS = ("display_name", "hero", "villain", "victim", "conflict", "story",
               "description", "source")


class ValidationError(NarframeError):
    """Aggregated invariant violations found while loading a catalog."""

    def __init__(self, violations: list[Violation]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


@dataclass(frozen=True)
class FrameSignature:
    """One named narrative frame's admissible component sets.

    Role slots keep their file order (the first-listed member is the
    frame's most typical filler) but match with set semantics.
    """

    frame_id: str
    display_name: str
    hero: tuple[str, ...] | None  # None means ANY (optional slot)
    villain: tuple[str, ...] | None
    victim: tuple[str, ...] | None
    focus: Focus
    conflict: ConflictStance
    story: CulturalStory
    description: str
    source: str

    def role_set(self, slot: str) -> tuple[str, ...] | None:
        if slot not in ROLE_SLOTS:
            raise ValueError(f"not a role slot: {slot!r}")
        return getattr(self, slot)

    def signature_key(self) -> tuple:
        """The six-slot identity used for pairwise distinctness (set equality)."""
        def as_set(members):
            return None if members is ANY else frozenset(members)

        return (as_set(self.hero), as_set(self.villain), as_set(self.victim),
                self.focus, self.conflict, self.story)


@dataclass(frozen=True)
class Catalog:
    taxonomy: Taxonomy
    frames: tuple[FrameSignature, ...]

    def frame_ids(self) -> tuple[str, ...]:
        return tuple(f.frame_id for f in self.frames)

    def frame(self, frame_id: str) -> FrameSignature:
        for f in self.frames:
            if f.frame_id == frame_id:
                return f
        raise KeyError(frame_id)


def _parse_role_value(value: str, slot: str, line_no: int) -> tuple[str, ...] | None:
    if value.strip().upper() == "ANY":
        return ANY
    members = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            raise ParseError(f"empty member in {slot} admissible-set", line_no)
        if part in members:
            raise ParseError(f"duplicate member {part!r} in {slot} admissible-set", line_no)
        members.append(part)
    return tuple(members)


def parse_catalog(text: str, taxonomy: Taxonomy) -> Catalog:
    """Parse the catalog file format without validating invariants.

    Blocks of ``key: value`` lines, one per frame, grouped under
    ``[hero-focused]`` / ``[villain-focused]`` / ``[victim-focused]``
    headings which set each frame's focus. File order is preserved.
    """
    frames: list[FrameSignature] = []
    current_focus: Focus | None = None
    block: dict[str, str] = {}
    block_line = 0

    def close_block():
        if not block:
            return
        missing = [k for k in ("frame",) + _BLOCK_KEYS if k not in block]
        if missing:
            raise ParseError(
                f"frame block {block.get('frame', '?')!r} missing keys {missing}", block_line
            )
        try:
            conflict = parse_label("conflict", block["conflict"])
            story = parse_label("story", block["story"])
        except UnknownLabel as exc:
            raise ParseError(f"frame {block['frame']!r}: {exc}", block_line) from exc
        frames.append(
            FrameSignature(
                frame_id=block["frame"],
                display_name=block["display_name"],
                hero=_parse_role_value(block["hero"], "hero", block_line),
                villain=_parse_role_value(block["villain"], "villain", block_line),
                victim=_parse_role_value(block["victim"], "victim", block_line),
                focus=current_focus,
                conflict=conflict,
                story=story,
                description=block["description"],
                source=block["source"],
            )
        )
        block.clear()

    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            close_block()
            group = stripped[1:-1].strip()
            if group not in _GROUP_FOCUS:
                raise ParseError(f"unknown group heading {stripped!r}", line_no)
            current_focus = _GROUP_FOCUS[group]
            continue
        if ":" not in stripped:
            raise ParseError(f"expected 'key: value', got {stripped!r}", line_no)
        key, _, value = stripped.partition(":")
        key = key.strip()
        value = value.strip()
        if key == "frame":
            close_block()
            if current_focus is None:
                raise ParseError("frame block before any group heading", line_no)
            block["frame"] = value
            block_line = line_no
        else:
            if "frame" not in block:
                raise ParseError(f"key {key!r} outside a frame block", line_no)
            if key not in _BLOCK_KEYS:
                raise ParseError(f"unknown key {key!r} in frame block", line_no)
            block[key] = value
    close_block()
    if not frames:
        raise ParseError("catalog file defines no frames")
    return Catalog(taxonomy=taxonomy, frames=tuple(frames))


def validate_catalog(catalog: Catalog) -> list[Violation]:
    """Check all catalog invariants; empty list iff the catalog is valid.

    Checks id uniqueness, admissible-set membership in the taxonomy,
    the at-least-one-mandatory-role rule, and pairwise distinctness of
    the six-slot signatures.
    """
    violations = []
    seen_ids: set[str] = set()
    for frame in catalog.frames:
        if frame.frame_id in seen_ids:
            violations.append(Violation("DuplicateFrameId", frame.frame_id))
        seen_ids.add(frame.frame_id)
        mandatory = 0
        for slot in ROLE_SLOTS:
            members = frame.role_set(slot)
            if members is ANY:
                continue
            mandatory += 1
            if not members:
                violations.append(
                    Violation("EmptyAdmissibleSet", f"{frame.frame_id}.{slot}")
                )
            if NONE in members:
                violations.append(
                    Violation("NoneInAdmissibleSet", f"{frame.frame_id}.{slot}")
                )
            for member in members:
                if member != NONE and not catalog.taxonomy.has(member):
                    violations.append(
                        Violation(
                            "UnknownTaxonomyMember",
                            f"{frame.frame_id}.{slot}: {member}",
                        )
                    )
        if mandatory == 0:
            violations.append(Violation("NoMandatoryCharacter", frame.frame_id))
    for i, first in enumerate(catalog.frames):
        for second in catalog.frames[i + 1:]:
            if first.signature_key() == second.signature_key():
                violations.append(
                    Violation(
                        "DuplicateSignature",
                        f"{first.frame_id} and {second.frame_id}",
                    )
                )
    return violations


def load_catalog(source: str, taxonomy: Taxonomy) -> Catalog:
    """Parse and validate a catalog from file text.

    Raises ParseError with line context on malformed input and
    ValidationError aggregating all invariant violations.
    """
    catalog = parse_catalog(source, taxonomy)
    violations = validate_catalog(catalog)
    if violations:
        raise ValidationError(violations)
    return catalog


def dump_catalog(catalog: Catalog) -> str:
    """Serialize to the canonical catalog file format (frames grouped by focus)."""
    def role_value(members: tuple[str, ...] | None) -> str:
        if members is ANY:
            return "ANY"
        return ", ".join(members)

    lines: list[str] = []
    last_focus = None
    for frame in catalog.frames:
        group = {Focus.HERO: "hero-focused", Focus.VILLAIN: "villain-focused",
                 Focus.VICTIM: "victim-focused"}[frame.focus]
        if frame.focus != last_focus:
            if lines:
                lines.append("")
            lines.append(f"[{group}]")
            last_focus = frame.focus
        lines += [
            "",
            f"frame: {frame.frame_id}",
            f"display_name: {frame.display_name}",
            f"hero: {role_value(frame.hero)}",
            f"villain: {role_value(frame.villain)}",
            f"victim: {role_value(frame.victim)}",
            f"conflict: {frame.conflict.value}",
            f"story: {frame.story.value}",
            f"description: {frame.description}",
            f"source: {frame.source}",
        ]
    return "\n".join(lines) + "\n"


def _data_text(name: str) -> str:
    return resources.files("narframe").joinpath(f"data/{name}").read_text(encoding="utf-8")


def climate_taxonomy() -> Taxonomy:
    """The shipped 10-class climate stakeholder taxonomy."""
    return parse_taxonomy(_data_text("climate_taxonomy.txt"))


def climate_catalog(taxonomy: Taxonomy | None = None) -> Catalog:
    """The shipped 16-frame climate catalog, validated on load."""
    return load_catalog(_data_text("climate_catalog.txt"), taxonomy or climate_taxonomy())


def load_catalog_file(path: str | Path, taxonomy: Taxonomy) -> Catalog:
    return load_catalog(Path(path).read_text(encoding="utf-8"), taxonomy)
