from __future__ import annotations

import json
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narframe.gateway import Gateway, ProviderError, StaticProvider
from narframe.tasks import (
    FailureMarker,
    FewShot,
    MissingStructureLabels,
    TASK_IDS,
    TaskSpec,
    TemplateFieldUnbound,
    build_prompt,
    build_task_specs,
    climate_task_specs,
    extract_json_object,
    gold_label,
    parse_hvv_response,
    parse_response,
    read_prediction_set,
    run_task,
    structure_hint,
    structure_labels_from_gold,
    structure_labels_from_predictions,
    write_prediction_set,
)

from conftest import GOLDENS, gold_responder


@pytest.fixture(scope="module")
def specs(catalog):
    return climate_task_specs(catalog)


def test_label_space_class_counts(specs):
    counts = {task_id: len(specs[task_id].label_space) for task_id in TASK_IDS}
    assert counts == {
        "HERO": 10, "VILLAIN": 10, "VICTIM": 10, "FOCUS": 3, "CONFLICT": 4,
        "STORY": 3, "NARRATIVE": 16, "NARRATIVE_STRUCTURED": 16,
    }


def test_joint_mode_shares_one_prompt(specs):
    assert (specs["HERO"].prompt_template == specs["VILLAIN"].prompt_template
            == specs["VICTIM"].prompt_template == specs["FOCUS"].prompt_template)


def test_split_mode_uses_per_role_prompts(catalog):
    split = climate_task_specs(catalog, split_roles=True)
    assert "who is framed as a hero in it" in split["HERO"].prompt_template
    assert "hero" not in split["FOCUS"].prompt_template.split("\n")[0]
    assert split["HERO"].prompt_template != split["VILLAIN"].prompt_template
    assert len(split["HERO"].label_space) == 10


def test_prompt_golden_files(specs, corpus):
    labels = structure_labels_from_gold(corpus)
    for task_id in TASK_IDS:
        kwargs = {"structure_labels": labels["a1"]} if task_id == "NARRATIVE_STRUCTURED" else {}
        expected = (GOLDENS / f"{task_id}.txt").read_text(encoding="utf-8")
        assert build_prompt(specs[task_id], corpus[0], **kwargs) == expected, task_id


def test_build_prompt_deterministic(specs, corpus):
    first = build_prompt(specs["STORY"], corpus[1])
    assert all(build_prompt(specs["STORY"], corpus[1]) == first for _ in range(3))


def test_build_prompt_structure_label_contract(specs, corpus):
    with pytest.raises(MissingStructureLabels):
        build_prompt(specs["NARRATIVE_STRUCTURED"], corpus[0])
    with pytest.raises(ValueError):
        build_prompt(specs["STORY"], corpus[0],
                     structure_labels={"hero": "None", "villain": "None",
                                       "victim": "None", "focus": "HERO"})
    with pytest.raises(MissingStructureLabels):
        build_prompt(specs["NARRATIVE_STRUCTURED"], corpus[0],
                     structure_labels={"hero": "None"})


def test_structured_prompt_contains_gold_labels_verbatim(specs, corpus):
    labels = structure_labels_from_gold(corpus)["a1"]
    prompt = build_prompt(specs["NARRATIVE_STRUCTURED"], corpus[0], structure_labels=labels)
    assert "Hero: None\nVillain: INDUSTRY_EMISSIONS\nVictim: ANIMALS_NATURE_ENVIRONMENT\nFocus: VICTIM" in prompt


def test_structure_hint_omits_optional_slots(catalog):
    hint = structure_hint(catalog.frame("ALL_TALK"))
    assert hint == ("The typical villain here is GOVERNMENTS_POLITICIANS. "
                    "The narrative focuses on the villain.")
    gore = structure_hint(catalog.frame("GORE"))
    assert "typical hero here is SCIENCE_EXPERTS_SCI.REPORTS" in gore
    assert "GOVERNMENTS_POLITICIANS, GENERAL_PUBLIC, or INDUSTRY_EMISSIONS" in gore


def test_template_unbound_field_detected():
    from string import Template

    from narframe.tasks import _render

    with pytest.raises(TemplateFieldUnbound):
        _render(Template("Hello $missing"), topic="x")


def test_extract_json_object_variants():
    assert extract_json_object('{"a": 1}') == {"a": 1}
    assert extract_json_object('prose {"a": {"b": 2}} trailer') == {"a": {"b": 2}}
    assert extract_json_object('```json\n{"a": "x"}\n```') == {"a": "x"}
    assert extract_json_object('{broken} then {"a": 1}') == {"a": 1}
    assert extract_json_object('[1, 2, 3]') is None
    assert extract_json_object("no braces") is None
    assert extract_json_object('{"s": "brace } inside"} ') == {"s": "brace } inside"}


def test_parse_response_examples(specs):
    assert parse_response(specs["CONFLICT"], '{"conflict": "PREVENT_CONFLICT"}') == "PREVENT_CONFLICT"
    fenced = '```json\n{"conflict": "PREVENT_CONFLICT"}\n```\nDone.'
    assert parse_response(specs["CONFLICT"], fenced) == "PREVENT_CONFLICT"
    fatalist = parse_response(specs["STORY"], '{"story": "FATALIST"}')
    assert isinstance(fatalist, FailureMarker) and fatalist.kind == "UnknownLabel"
    missing = parse_response(specs["FOCUS"], '{"role": "HERO"}')
    assert isinstance(missing, FailureMarker) and missing.kind == "MissingField"
    garbage = parse_response(specs["FOCUS"], "cannot answer")
    assert isinstance(garbage, FailureMarker) and garbage.kind == "NoJsonFound"


def test_parse_response_role_none(specs):
    assert parse_response(specs["HERO"], '{"hero_class": "None"}') == "None"
    assert parse_response(specs["HERO"], '{"hero_class": null}') == "None"


def test_parse_hvv_response(specs, taxonomy):
    raw = json.dumps({
        "hero_class": "governments_politicians", "villain_class": "CLIMATE_CHANGE",
        "victim_class": "None", "focus": "hero",
    })
    parsed = parse_hvv_response(raw, taxonomy.labels())
    assert parsed == {"hero": "GOVERNMENTS_POLITICIANS", "villain": "CLIMATE_CHANGE",
                      "victim": "None", "focus": "HERO"}
    degraded = parse_hvv_response(
        '{"hero_class": "ALIENS", "villain_class": "None", "victim_class": "None", "focus": "VILLAIN"}',
        taxonomy.labels(),
    )
    assert degraded["hero"] == "None"
    missing = parse_hvv_response('{"hero_class": "None"}', taxonomy.labels())
    assert isinstance(missing, FailureMarker) and missing.kind == "MissingField"


@settings(max_examples=300, deadline=None)
@given(raw=st.text(alphabet=string.printable, max_size=200))
def test_label_space_closure_on_arbitrary_input(raw):
    # Build the task spec once per process; hypothesis reuses it.
    task = _closure_task()
    outcome = parse_response(task, raw)
    if not isinstance(outcome, FailureMarker):
        assert outcome in task.label_space


_CLOSURE_TASK = None


def _closure_task():
    global _CLOSURE_TASK
    if _CLOSURE_TASK is None:
        from narframe.catalog import climate_catalog
        _CLOSURE_TASK = climate_task_specs(climate_catalog())["CONFLICT"]
    return _CLOSURE_TASK


def test_run_task_split_roles_round_trip(catalog, corpus, gold_gateway):
    split = climate_task_specs(catalog, split_roles=True)
    [ps] = run_task(split["HERO"], corpus, gold_gateway)
    assert ps.failure_count() == 0
    for article in corpus:
        assert ps.labels_by_article()[article.id] == article.gold.hero


def test_run_task_predicts_gold_labels(specs, corpus, gold_gateway):
    [ps] = run_task(specs["CONFLICT"], corpus, gold_gateway)
    assert len(ps.predictions) == len(corpus)
    assert ps.failure_count() == 0
    for article in corpus:
        assert ps.labels_by_article()[article.id] == article.gold.conflict.value
    assert all(p.raw_ref for p in ps.predictions)


def test_run_task_repeated_runs_are_identical_and_cached(specs, corpus, gold_gateway):
    sets = run_task(specs["FOCUS"], corpus, gold_gateway, runs=5)
    assert len(sets) == 5
    baseline = [(p.article_id, p.label, p.raw_ref) for p in sets[0].predictions]
    for ps in sets[1:]:
        assert [(p.article_id, p.label, p.raw_ref) for p in ps.predictions] == baseline
    # Temperature 0 on a deterministic provider: one live call per article.
    assert gold_gateway.live_calls == len(corpus)


def test_run_task_joint_prompt_shares_cache_across_tasks(specs, corpus, gold_gateway):
    run_task(specs["HERO"], corpus, gold_gateway)
    run_task(specs["FOCUS"], corpus, gold_gateway)
    # The combined character prompt is one fingerprint per article.
    assert gold_gateway.live_calls == len(corpus)


def test_run_task_fail_soft_marks_provider_errors(specs, corpus, tmp_path):
    inner = gold_responder(corpus)

    def flaky(request):
        if corpus[2].text in request.article_text:
            raise ProviderError("synthetic outage")
        return inner(request)

    gateway = Gateway(StaticProvider(flaky, name="flaky"), cache_dir=tmp_path)
    [ps] = run_task(_closure_task(), corpus, gateway)
    failures = {p.article_id: p.failure for p in ps.predictions if p.failure}
    assert set(failures) == {corpus[2].id}
    assert failures[corpus[2].id].kind == "ProviderError"
    with pytest.raises(ProviderError):
        run_task(_closure_task(), corpus, gateway, fail_soft=False)


def test_run_task_structured_requires_labels(specs, corpus, gold_gateway):
    with pytest.raises(MissingStructureLabels):
        run_task(specs["NARRATIVE_STRUCTURED"], corpus, gold_gateway)


def test_structured_chaining_from_predictions(specs, corpus, gold_gateway):
    prior = {}
    for task_id in ("HERO", "VILLAIN", "VICTIM", "FOCUS"):
        [prior[task_id]] = run_task(specs[task_id], corpus, gold_gateway)
    noisy = structure_labels_from_predictions(prior)
    assert noisy["a4"] == {"hero": "GOVERNMENTS_POLITICIANS", "villain": "CLIMATE_CHANGE",
                           "victim": "None", "focus": "HERO"}
    [ps] = run_task(specs["NARRATIVE_STRUCTURED"], corpus, gold_gateway,
                    structure_labels=noisy)
    assert ps.failure_count() == 0
    with pytest.raises(MissingStructureLabels):
        structure_labels_from_predictions({"HERO": prior["HERO"]})


def test_few_shot_examples_injected_and_seeded(specs, corpus, gold_gateway):
    pool = [
        (a, {"conflict": a.gold.conflict.value}) for a in corpus if a.gold is not None
    ]
    few = FewShot(pool, k=2, seed=42)
    sample_ids = [a.id for a, _ in few.sample()]
    assert [a.id for a, _ in FewShot(pool, k=2, seed=42).sample()] == sample_ids
    target = corpus[0]
    prompt = build_prompt(specs["CONFLICT"], target, examples=few.sample())
    assert "Examples:" in prompt and "Answer: {" in prompt
    # The target article never appears among its own examples.
    examples = [(a, ans) for a, ans in few.sample() if a.id != target.id]
    rebuilt = build_prompt(specs["CONFLICT"], target, examples=examples)
    assert target.text not in rebuilt.rsplit("Article:", 1)[0]
    with pytest.raises(ValueError):
        FewShot(pool, k=99)


def test_record_task_session_collapses_runs_and_replays(specs, corpus, tmp_path):
    from narframe.gateway import Gateway, ReplayProvider, StaticProvider
    from narframe.tasks import record_task_session

    archive = tmp_path / "archive"
    recorder = Gateway(StaticProvider(gold_responder(corpus), name="scripted",
                                      model_id="scripted-model-1"), cache_dir=archive)
    summary = record_task_session(specs["STORY"], corpus, recorder, runs=5,
                                  manifest_path=tmp_path / "manifest.jsonl")
    assert summary.total == 5 * len(corpus)
    assert summary.distinct_fingerprints == len(corpus)
    assert summary.fetched == len(corpus) and not summary.failures

    resumed = record_task_session(specs["STORY"], corpus, recorder)
    assert resumed.fetched == 0 and resumed.from_cache == len(corpus)

    replay = Gateway(ReplayProvider(archive))
    [ps] = run_task(specs["STORY"], corpus, replay)
    assert ps.failure_count() == 0
    for article in corpus:
        assert ps.labels_by_article()[article.id] == article.gold.story.value


def test_prediction_set_round_trip(specs, corpus, gold_gateway, tmp_path):
    [ps] = run_task(specs["STORY"], corpus, gold_gateway)
    path = write_prediction_set(ps, tmp_path / "runs")
    assert path == tmp_path / "runs" / "scripted" / "STORY" / "run0.jsonl"
    loaded = read_prediction_set(path)
    assert loaded == ps


def test_gold_label_helper(corpus):
    a1 = corpus[0]
    assert gold_label(a1, "VILLAIN") == "INDUSTRY_EMISSIONS"
    assert gold_label(a1, "HERO") == "None"
    assert gold_label(a1, "FOCUS") == "VICTIM"
    assert gold_label(a1, "NARRATIVE") == "ENDANGERED_SPECIES"
    a3 = corpus[2]
    assert gold_label(a3, "NARRATIVE") is None


def test_task_spec_validation():
    with pytest.raises(ValueError):
        TaskSpec(task_id="NOPE", label_space=("A",), prompt_template="x",
                 response_fields=("f",), slot=None)
    with pytest.raises(ValueError):
        TaskSpec(task_id="HERO", label_space=("A",), prompt_template="x",
                 response_fields=(), slot="hero")
