from __future__ import annotations

import dataclasses
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narframe.catalog import ANY
from narframe.core import (
    NONE,
    AnnotationRecord,
    ConflictStance,
    CulturalStory,
    EmptyInput,
    Focus,
    NarrativeStructure,
)
from narframe.matcher import (
    NO_MATCH,
    PARTIAL,
    PREDICTED,
    TIED,
    UNIQUE,
    SpaceTooLarge,
    adjudicate,
    enumerate_matches,
    match_statistics,
    match_structure,
    structure_space,
)

from oracles import oracle_match


def make(hero=NONE, villain=NONE, victim=NONE, focus=None, conflict=None, story=None):
    return NarrativeStructure(hero=hero, villain=villain, victim=victim,
                              focus=focus, conflict=conflict, story=story)


def test_endangered_species_unique(catalog):
    result = match_structure(
        make(villain="INDUSTRY_EMISSIONS", victim="ANIMALS_NATURE_ENVIRONMENT",
             focus=Focus.VICTIM, conflict=ConflictStance.PREVENT_CONFLICT,
             story=CulturalStory.HIERARCHICAL),
        catalog,
    )
    assert result.verdict == UNIQUE
    assert result.candidates[0].frame_id == "ENDANGERED_SPECIES"
    assert result.candidates[0].specificity == 5  # two role slots + three scalars


def test_denialist_structure_is_no_match(catalog):
    result = match_structure(
        make(hero="SCIENCE_EXPERTS_SCI.REPORTS", villain="ENV.ORGS_ACTIVISTS",
             focus=Focus.HERO, conflict=ConflictStance.FUEL_CONFLICT,
             story=CulturalStory.INDIVIDUALISTIC),
        catalog,
    )
    assert result.verdict == NO_MATCH
    assert result.candidates == ()


def test_all_talk_unique(catalog):
    result = match_structure(
        make(villain="GOVERNMENTS_POLITICIANS", focus=Focus.VILLAIN,
             conflict=ConflictStance.PREVENT_RESOLUTION, story=CulturalStory.EGALITARIAN),
        catalog,
    )
    assert result.verdict == UNIQUE
    assert result.candidates[0].frame_id == "ALL_TALK"


def test_empty_structure_no_match_in_predicted_mode(catalog):
    assert match_structure(make(), catalog, mode=PREDICTED).verdict == NO_MATCH


def test_gold_mode_requires_all_slots(catalog):
    with pytest.raises(ValueError):
        match_structure(make(villain="GOVERNMENTS_POLITICIANS", focus=Focus.VILLAIN),
                        catalog)


def test_predicted_mode_partial_slots_can_tie(catalog):
    # Without a story, ALL_TALK and DEBATE_AND_SCAM both fit at specificity 3.
    result = match_structure(
        make(villain="GOVERNMENTS_POLITICIANS", focus=Focus.VILLAIN,
             conflict=ConflictStance.PREVENT_RESOLUTION),
        catalog, mode=PREDICTED,
    )
    assert result.verdict == TIED
    assert [c.frame_id for c in result.candidates[:2]] == ["ALL_TALK", "DEBATE_AND_SCAM"]
    trace = {slot_match.slot: slot_match.status for slot_match in
             result.candidates[0].slot_trace}
    assert trace["story"] == PARTIAL


def test_every_signature_self_matches_uniquely(catalog):
    for frame in catalog.frames:
        structure = make(
            hero=frame.hero[0] if frame.hero is not ANY else NONE,
            villain=frame.villain[0] if frame.villain is not ANY else NONE,
            victim=frame.victim[0] if frame.victim is not ANY else NONE,
            focus=frame.focus, conflict=frame.conflict, story=frame.story,
        )
        result = match_structure(structure, catalog)
        assert result.verdict == UNIQUE, frame.frame_id
        assert result.candidates[0].frame_id == frame.frame_id
        mandatory = sum(1 for slot in ("hero", "villain", "victim")
                        if frame.role_set(slot) is not ANY)
        assert result.candidates[0].specificity == mandatory + 3


def test_determinism(catalog):
    structure = make(villain="GOVERNMENTS_POLITICIANS", focus=Focus.VILLAIN,
                     conflict=ConflictStance.PREVENT_RESOLUTION,
                     story=CulturalStory.EGALITARIAN)
    first = match_structure(structure, catalog)
    for _ in range(5):
        assert match_structure(structure, catalog) == first


def _role_values(taxonomy):
    return (NONE,) + taxonomy.labels()


def test_matcher_agrees_with_oracle_on_random_sample(catalog):
    rng = random.Random(20240811)
    roles = _role_values(catalog.taxonomy)
    for _ in range(2000):
        structure = make(
            hero=rng.choice(roles), villain=rng.choice(roles), victim=rng.choice(roles),
            focus=rng.choice(tuple(Focus)), conflict=rng.choice(tuple(ConflictStance)),
            story=rng.choice(tuple(CulturalStory)),
        )
        verdict, ranked = oracle_match(structure, catalog)
        result = match_structure(structure, catalog)
        assert result.verdict == verdict
        assert [(c.frame_id, c.specificity) for c in result.candidates] == ranked


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_filling_a_none_role_keeps_any_slot_frames(catalog, data):
    roles = _role_values(catalog.taxonomy)
    structure = make(
        hero=data.draw(st.sampled_from(roles)),
        villain=data.draw(st.sampled_from(roles)),
        victim=data.draw(st.sampled_from(roles)),
        focus=data.draw(st.sampled_from(tuple(Focus))),
        conflict=data.draw(st.sampled_from(tuple(ConflictStance))),
        story=data.draw(st.sampled_from(tuple(CulturalStory))),
    )
    none_slots = [s for s in ("hero", "villain", "victim") if getattr(structure, s) == NONE]
    if not none_slots:
        return
    slot = data.draw(st.sampled_from(none_slots))
    value = data.draw(st.sampled_from(catalog.taxonomy.labels()))
    before = {c.frame_id for c in match_structure(structure, catalog).candidates}
    filled = match_structure(dataclasses.replace(structure, **{slot: value}), catalog)
    after = {c.frame_id for c in filled.candidates}
    any_frames = {f.frame_id for f in catalog.frames if f.role_set(slot) is ANY}
    assert before & any_frames <= after


def test_enumeration_size_and_bound(catalog):
    domains = structure_space(catalog.taxonomy)
    size = 1
    for values in domains.values():
        size *= len(values)
    assert size == 63_888
    with pytest.raises(SpaceTooLarge):
        enumerate_matches(catalog, bound=1000)


def test_enumeration_restriction_focus(catalog):
    hero_frames = {f.frame_id for f in catalog.frames if f.focus == Focus.HERO}
    stats = match_statistics(catalog, restrict={"focus": (Focus.HERO,)})
    assert stats.total == 11 * 11 * 11 * 4 * 4
    assert set(stats.unique_by_frame) <= hero_frames


def test_enumeration_empty_catalog_all_no_match(catalog, taxonomy):
    empty = type(catalog)(taxonomy=taxonomy, frames=())
    stats = match_statistics(empty, restrict={"hero": (NONE,), "villain": (NONE,)})
    assert stats.no_match == stats.total > 0


def test_enumeration_reports_ambiguous_regions(catalog, taxonomy):
    from narframe.catalog import load_catalog

    overlapping = """
[villain-focused]

frame: NARROW
display_name: Narrow
hero: ANY
villain: GOVERNMENTS_POLITICIANS
victim: ANY
conflict: PREVENT_RESOLUTION
story: INDIVIDUALISTIC
description: One villain only.
source: Test (2020)

frame: WIDE
display_name: Wide
hero: ANY
villain: GOVERNMENTS_POLITICIANS, LEGISLATION_POLICIES
victim: ANY
conflict: PREVENT_RESOLUTION
story: INDIVIDUALISTIC
description: Two villains.
source: Test (2020)
"""
    stats = match_statistics(
        load_catalog(overlapping, taxonomy),
        restrict={"hero": (NONE,), "victim": (NONE,)},
    )
    assert stats.tied > 0
    structure, frames = stats.tied_examples[0]
    assert frames == ("NARROW", "WIDE")
    assert structure.villain == "GOVERNMENTS_POLITICIANS"
    # The shipped catalog has no ambiguous region over the full gold space.
    assert match_statistics(catalog).tied == 0


def _records(labels, article="a1", slot="hero"):
    return [
        AnnotationRecord(article_id=article, annotator_id=f"ann{i}", slot=slot, label=label)
        for i, label in enumerate(labels)
    ]


def test_adjudicate_strict_majority():
    outcome = adjudicate(_records(["GOV", "GOV", "LEGISLATION"]), "hero")
    assert (outcome.label, outcome.support, outcome.tie) == ("GOV", 2, False)


def test_adjudicate_tie_resolved_by_expert():
    records = _records(["GOV", "LEGISLATION"])
    outcome = adjudicate(records, "hero", expert_id="ann0")
    assert (outcome.label, outcome.support, outcome.tie) == ("GOV", 1, True)


def test_adjudicate_unresolved_tie():
    outcome = adjudicate(_records(["A", "A", "B", "B", "C"]), "hero")
    assert outcome.label is None and outcome.tie and outcome.support == 2


def test_adjudicate_expert_outside_tie_stays_unresolved():
    records = _records(["A", "A", "B", "B", "C"])
    outcome = adjudicate(records, "hero", expert_id="ann4")  # expert voted C
    assert outcome.label is None and outcome.tie


def test_adjudicate_input_validation():
    with pytest.raises(EmptyInput):
        adjudicate([], "hero")
    mixed = _records(["A"]) + _records(["B"], article="a2")
    with pytest.raises(ValueError):
        adjudicate(mixed, "hero")
