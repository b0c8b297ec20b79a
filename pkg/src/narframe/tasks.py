"""Prediction tasks: prompt construction, response parsing, orchestration.

Eight tasks cover the narrative-frame components and the frame itself:
HERO, VILLAIN, VICTIM and FOCUS (served by one combined prompt by
default, or per-role prompts in split mode), CONFLICT, STORY, NARRATIVE,
and NARRATIVE_STRUCTURED (the narrative prompt augmented with each
frame's typical structure, with the article prefixed by its component
labels). Prompt assembly is deterministic: the same inputs always yield
byte-identical text, which the golden-file tests pin down.

Responses are expected to contain one JSON object; parsing is tolerant
of fencing, surrounding prose, field order, and label casing, and turns
anything unusable into a typed failure marker instead of aborting the
batch. Failures score as incorrect downstream.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Mapping, Sequence

from .catalog import ANY, Catalog
from .core import (
    NONE,
    ROLE_SLOTS,
    ArticleRecord,
    ConflictStance,
    Focus,
    NarframeError,
    Taxonomy,
    UnknownLabel,
    canon_label,
    render_label,
)
from .gateway import CompletionRequest, Gateway

TASK_IDS = ("HERO", "VILLAIN", "VICTIM", "FOCUS", "CONFLICT", "STORY",
            "NARRATIVE", "NARRATIVE_STRUCTURED")

DEFAULT_TOPIC = "climate change"
DEFAULT_ISSUE = "climate crisis"

# Cultural story class lines for the story prompt. FATALIST ships for
# completeness but is outside the default label space.
STORY_DESCRIPTIONS = {
    "HIERARCHICAL": "this story assumes that the situation can be controlled externally, "
                    "but we need to be bound by tight social prescriptions and group actions.",
    "INDIVIDUALISTIC": "this story assumes that the situation cannot be controlled externally, "
                       "and no group actions are necessary.",
    "EGALITARIAN": "this story assumes that the situation requires combined efforts "
                   "and group actions of all members of society.",
    "FATALIST": "this story assumes that the situation cannot be controlled at all, "
                "and people are at the mercy of forces outside their control.",
}
DEFAULT_STORY_LABELS = ("HIERARCHICAL", "INDIVIDUALISTIC", "EGALITARIAN")

_TASK_FIELD = {
    "HERO": "hero_class",
    "VILLAIN": "villain_class",
    "VICTIM": "victim_class",
    "FOCUS": "focus",
    "CONFLICT": "conflict",
    "STORY": "story",
    "NARRATIVE": "narrative",
    "NARRATIVE_STRUCTURED": "narrative",
}

_TASK_SLOT = {
    "HERO": "hero",
    "VILLAIN": "villain",
    "VICTIM": "victim",
    "FOCUS": "focus",
    "CONFLICT": "conflict",
    "STORY": "story",
}


class MissingStructureLabels(NarframeError):
    """NARRATIVE_STRUCTURED needs per-article component labels."""


class TemplateFieldUnbound(NarframeError):
    """A prompt template placeholder was left without a value."""


@dataclass(frozen=True)
class FailureMarker:
    """Typed per-item parse or transport failure; data, not an exception."""

    kind: str  # NoJsonFound | MissingField | UnknownLabel | ProviderError
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


@dataclass(frozen=True)
class TaskSpec:
    """One prediction task: label space, rendered prompt, reply contract."""

    task_id: str
    label_space: tuple[str, ...]
    prompt_template: str  # rendered instruction block; article appended per call
    response_fields: tuple[str, ...]
    slot: str | None  # component slot for label normalization, None for narratives

    def __post_init__(self):
        if self.task_id not in TASK_IDS:
            raise ValueError(f"unknown task id {self.task_id!r}")
        if not self.response_fields:
            raise ValueError("a task needs at least one response field")

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "label_space": list(self.label_space),
            "prompt_template": self.prompt_template,
            "response_fields": list(self.response_fields),
            "slot": self.slot,
        }


def _prompt_template(name: str) -> Template:
    text = resources.files("narframe").joinpath(f"data/prompts/{name}.txt").read_text("utf-8")
    return Template(text.rstrip("\n"))


def _render(template: Template, **values: str) -> str:
    try:
        return template.substitute(**values)
    except KeyError as exc:
        raise TemplateFieldUnbound(f"template placeholder {exc} has no value") from exc


def _taxonomy_class_lines(taxonomy: Taxonomy) -> str:
    return "\n".join(f"{cls.label}: {cls.description}" for cls in taxonomy.classes)


def _story_class_lines(labels: Sequence[str]) -> str:
    return "\n".join(f"{label}: {STORY_DESCRIPTIONS[label]}" for label in labels)


def _role_phrase(members: tuple[str, ...]) -> str:
    if len(members) == 1:
        return members[0]
    if len(members) == 2:
        return f"{members[0]} or {members[1]}"
    return ", ".join(members[:-1]) + ", or " + members[-1]


def structure_hint(frame) -> str:
    """Schematic typical-structure sentence generated from a signature.

    Mirrors how structured narrative prompts spell out each frame's
    typical characters and focal role; optional (ANY) slots are omitted.
    """
    parts = []
    for slot in ROLE_SLOTS:
        members = frame.role_set(slot)
        if members is not ANY:
            parts.append(f"The typical {slot} here is {_role_phrase(members)}.")
    parts.append(f"The narrative focuses on the {frame.focus.value.lower()}.")
    return " ".join(parts)


def _narrative_class_lines(catalog: Catalog, structured: bool) -> str:
    lines = []
    for frame in sorted(catalog.frames, key=lambda f: f.frame_id):
        text = frame.description
        if structured:
            text = f"{text} {structure_hint(frame)}"
        lines.append(f"{frame.frame_id}: {text}")
    return "\n".join(lines)


def build_task_specs(
    taxonomy: Taxonomy,
    catalog: Catalog | None = None,
    topic: str = DEFAULT_TOPIC,
    issue: str | None = None,
    split_roles: bool = False,
    story_labels: Sequence[str] = DEFAULT_STORY_LABELS,
) -> dict[str, TaskSpec]:
    """Build the TaskSpec set for one domain.

    Component tasks are domain-agnostic apart from the topic/issue tokens
    and the stakeholder class list; the narrative tasks additionally need
    a frame catalog and are omitted when none is given.

    `issue` is the crisis phrase used by the conflict prompt. It defaults
    to "<topic> crisis", except for the shipped climate domain whose
    canonical phrase is "climate crisis" (not "climate change crisis"),
    so building climate tasks with topic alone reproduces the originals.
    """
    if issue is None:
        issue = DEFAULT_ISSUE if topic == DEFAULT_TOPIC else f"{topic} crisis"
    role_space = taxonomy.labels()
    specs: dict[str, TaskSpec] = {}

    if split_roles:
        role_template = _prompt_template("role")
        for task_id in ("HERO", "VILLAIN", "VICTIM"):
            field = _TASK_FIELD[task_id]
            specs[task_id] = TaskSpec(
                task_id=task_id,
                label_space=role_space,
                prompt_template=_render(
                    role_template, topic=topic, role=task_id.lower(),
                    classes=_taxonomy_class_lines(taxonomy), field=field,
                ),
                response_fields=(field,),
                slot=_TASK_SLOT[task_id],
            )
        specs["FOCUS"] = TaskSpec(
            task_id="FOCUS",
            label_space=tuple(f.value for f in Focus),
            prompt_template=_render(_prompt_template("focus"), topic=topic),
            response_fields=("focus",),
            slot="focus",
        )
    else:
        joint = _render(
            _prompt_template("hvv"), topic=topic,
            classes=_taxonomy_class_lines(taxonomy),
        )
        for task_id in ("HERO", "VILLAIN", "VICTIM"):
            specs[task_id] = TaskSpec(
                task_id=task_id,
                label_space=role_space,
                prompt_template=joint,
                response_fields=(_TASK_FIELD[task_id],),
                slot=_TASK_SLOT[task_id],
            )
        specs["FOCUS"] = TaskSpec(
            task_id="FOCUS",
            label_space=tuple(f.value for f in Focus),
            prompt_template=joint,
            response_fields=("focus",),
            slot="focus",
        )

    specs["CONFLICT"] = TaskSpec(
        task_id="CONFLICT",
        label_space=tuple(c.value for c in ConflictStance),
        prompt_template=_render(_prompt_template("conflict"), topic=topic, issue=issue),
        response_fields=("conflict",),
        slot="conflict",
    )
    specs["STORY"] = TaskSpec(
        task_id="STORY",
        label_space=tuple(story_labels),
        prompt_template=_render(
            _prompt_template("story"), topic=topic,
            classes=_story_class_lines(story_labels),
        ),
        response_fields=("story",),
        slot="story",
    )

    if catalog is not None:
        narrative_space = tuple(sorted(catalog.frame_ids()))
        specs["NARRATIVE"] = TaskSpec(
            task_id="NARRATIVE",
            label_space=narrative_space,
            prompt_template=_render(
                _prompt_template("narrative"), topic=topic,
                classes=_narrative_class_lines(catalog, structured=False),
            ),
            response_fields=("narrative",),
            slot=None,
        )
        specs["NARRATIVE_STRUCTURED"] = TaskSpec(
            task_id="NARRATIVE_STRUCTURED",
            label_space=narrative_space,
            prompt_template=_render(
                _prompt_template("narrative"), topic=topic,
                classes=_narrative_class_lines(catalog, structured=True),
            ),
            response_fields=("narrative",),
            slot=None,
        )
    return specs


def climate_task_specs(catalog: Catalog, split_roles: bool = False) -> dict[str, TaskSpec]:
    """All eight TaskSpecs for the shipped climate domain."""
    return build_task_specs(
        catalog.taxonomy, catalog,
        topic=DEFAULT_TOPIC, issue=DEFAULT_ISSUE, split_roles=split_roles,
    )


STRUCTURE_LABEL_SLOTS = ("hero", "villain", "victim", "focus")


def _structure_labels_block(labels: Mapping[str, str]) -> str:
    missing = [slot for slot in STRUCTURE_LABEL_SLOTS if slot not in labels]
    if missing:
        raise MissingStructureLabels(f"missing component labels {missing}")
    return "\n".join(
        f"{slot.capitalize()}: {labels[slot]}" for slot in STRUCTURE_LABEL_SLOTS
    )


def article_block(
    article: ArticleRecord,
    structure_labels: Mapping[str, str] | None = None,
) -> str:
    """The per-article payload: optional component labels, then the text."""
    parts = []
    if structure_labels is not None:
        parts.append(_structure_labels_block(structure_labels))
        parts.append("")
    parts.append("Article:")
    if article.title:
        parts.append(article.title)
    parts.append("")
    parts.append(article.text)
    return "\n".join(parts)


def _examples_block(task: TaskSpec, examples: Sequence[tuple[ArticleRecord, Mapping[str, str]]]) -> str:
    parts = ["Examples:"]
    for example, answer in examples:
        missing = [f for f in task.response_fields if f not in answer]
        if missing:
            raise ValueError(f"example answer lacks fields {missing}")
        payload = {f: answer[f] for f in task.response_fields}
        parts.append("")
        parts.append(article_block(example))
        parts.append("")
        parts.append(f"Answer: {json.dumps(payload, sort_keys=True)}")
    return "\n".join(parts)


def build_prompt(
    task: TaskSpec,
    article: ArticleRecord,
    structure_labels: Mapping[str, str] | None = None,
    examples: Sequence[tuple[ArticleRecord, Mapping[str, str]]] | None = None,
) -> str:
    """Assemble the full prompt text sent for one article.

    Deterministic: instructions, optional examples, optional component
    labels (structured narrative task only), then the article.
    """
    if task.task_id == "NARRATIVE_STRUCTURED":
        if structure_labels is None:
            raise MissingStructureLabels(
                "NARRATIVE_STRUCTURED requires hero/villain/victim/focus labels"
            )
    elif structure_labels is not None:
        raise ValueError("structure labels are only valid for NARRATIVE_STRUCTURED")
    parts = [task.prompt_template]
    if examples:
        parts.append(_examples_block(task, examples))
    parts.append(article_block(article, structure_labels))
    return "\n\n".join(parts)


def extract_json_object(raw: str) -> dict | None:
    """Return the first well-formed JSON object embedded in `raw`.

    Models wrap objects in prose and code fences; this scans for balanced
    top-level braces (string-aware) and tries each candidate in order.
    """
    i = raw.find("{")
    while i != -1:
        depth = 0
        in_string = False
        escaped = False
        for j in range(i, len(raw)):
            ch = raw[j]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        parsed = json.loads(raw[i:j + 1])
                    except json.JSONDecodeError:
                        break
                    if isinstance(parsed, dict):
                        return parsed
                    break
        i = raw.find("{", i + 1)
    return None


def _fields_ci(obj: dict) -> dict:
    return {str(k).strip().lower(): v for k, v in obj.items()}


_NONE_WORDS = ("", "none", "null")


def _normalize_field(field: str, value, slot: str | None, label_space: tuple[str, ...]) -> str:
    """Canonical label for one response field; raises UnknownLabel.

    Role slots map the literal absence words to the "None" sentinel; all
    other values must canonicalize into the task's label space.
    """
    raw = None if value is None else str(value)
    if slot in ROLE_SLOTS and (raw is None or raw.strip().lower() in _NONE_WORDS):
        return NONE
    label = canon_label(raw or "")
    if label not in label_space:
        raise UnknownLabel(str(raw), slot or field)
    return label


def parse_response(task: TaskSpec, raw: str):
    """Parse one model response into the task's canonical label.

    Returns the label string on success, otherwise a FailureMarker
    (NoJsonFound / MissingField / UnknownLabel). Never raises on model
    output, so batch runs cannot abort on a bad reply.
    """
    obj = extract_json_object(raw)
    if obj is None:
        return FailureMarker("NoJsonFound", raw[:120])
    fields = _fields_ci(obj)
    field = task.response_fields[0]
    if field not in fields:
        return FailureMarker("MissingField", field)
    try:
        return _normalize_field(field, fields[field], task.slot, task.label_space)
    except UnknownLabel as exc:
        return FailureMarker("UnknownLabel", f"{exc.raw} ({field})")


def parse_hvv_response(raw: str, role_labels: Sequence[str]):
    """Parse all four fields of the combined character prompt in one pass.

    Returns {"hero": ..., "villain": ..., "victim": ..., "focus": ...}
    with canonical labels, or a FailureMarker if the object is unusable.
    Role fields degrade to "None" individually when their label is
    unknown; a missing field or an unknown focus fails the parse.
    """
    obj = extract_json_object(raw)
    if obj is None:
        return FailureMarker("NoJsonFound", raw[:120])
    fields = _fields_ci(obj)
    role_space = tuple(role_labels)
    out: dict[str, str] = {}
    for slot in ROLE_SLOTS:
        field = f"{slot}_class"
        if field not in fields:
            return FailureMarker("MissingField", field)
        try:
            out[slot] = _normalize_field(field, fields[field], slot, role_space)
        except UnknownLabel:
            out[slot] = NONE
    if "focus" not in fields:
        return FailureMarker("MissingField", "focus")
    try:
        out["focus"] = _normalize_field(
            "focus", fields["focus"], "focus", tuple(f.value for f in Focus)
        )
    except UnknownLabel as exc:
        return FailureMarker("UnknownLabel", f"{exc.raw} (focus)")
    return out


@dataclass(frozen=True)
class Prediction:
    article_id: str
    label: str | None
    raw_ref: str  # fingerprint of the completion record
    failure: FailureMarker | None = None

    def to_dict(self) -> dict:
        out: dict = {"article_id": self.article_id, "label": self.label,
                     "raw_ref": self.raw_ref}
        if self.failure is not None:
            out["failure"] = self.failure.to_dict()
        return out


@dataclass(frozen=True)
class PredictionSet:
    task_id: str
    provider: str
    run_index: int
    predictions: tuple[Prediction, ...]

    def labels_by_article(self) -> dict[str, str | None]:
        return {p.article_id: p.label for p in self.predictions}

    def failure_count(self) -> int:
        return sum(1 for p in self.predictions if p.failure is not None)


class FewShot:
    """Optional example injection with seed-controlled sampling.

    Samples `k` labeled articles once per task run; the target article is
    excluded from its own prompt's examples.
    """

    def __init__(self, pool: Sequence[tuple[ArticleRecord, Mapping[str, str]]],
                 k: int = 5, seed: int = 0):
        if k > len(pool):
            raise ValueError(f"cannot sample {k} examples from a pool of {len(pool)}")
        self.pool = list(pool)
        self.k = k
        self.seed = seed

    def sample(self) -> list[tuple[ArticleRecord, Mapping[str, str]]]:
        return random.Random(self.seed).sample(self.pool, self.k)


def run_task(
    task: TaskSpec,
    corpus: Sequence[ArticleRecord],
    gateway: Gateway,
    runs: int = 1,
    model_id: str | None = None,
    temperature: float = 0.0,
    max_output: int = 1024,
    structure_labels: Mapping[str, Mapping[str, str]] | None = None,
    few_shot: FewShot | None = None,
    fail_soft: bool = True,
) -> list[PredictionSet]:
    """Run one prediction task over a corpus, one PredictionSet per run.

    Completion and parsing are fail-soft by default: transport errors and
    unusable replies become failure markers on their items and the batch
    continues. With fail_soft=False the first gateway error aborts.
    """
    model = model_id or getattr(gateway.provider, "model_id", "unknown-model")
    if task.task_id == "NARRATIVE_STRUCTURED" and structure_labels is None:
        raise MissingStructureLabels("run_task needs structure_labels for this task")
    examples = few_shot.sample() if few_shot else None

    sets = []
    for run_index in range(runs):
        requests_batch = []
        for article in corpus:
            labels = structure_labels.get(article.id) if structure_labels is not None else None
            if task.task_id == "NARRATIVE_STRUCTURED" and labels is None:
                raise MissingStructureLabels(f"no component labels for article {article.id!r}")
            use_examples = None
            if examples:
                use_examples = [(ex, ans) for ex, ans in examples if ex.id != article.id]
            instructions = task.prompt_template
            payload_parts = []
            if use_examples:
                payload_parts.append(_examples_block(task, use_examples))
            payload_parts.append(article_block(article, labels))
            requests_batch.append(
                CompletionRequest(
                    model_id=model,
                    prompt=instructions,
                    article_text="\n\n".join(payload_parts),
                    temperature=temperature,
                    max_output=max_output,
                    run_index=run_index,
                )
            )
        outcomes = gateway.complete_many(requests_batch)
        predictions = []
        for article, outcome in zip(corpus, outcomes):
            if isinstance(outcome, NarframeError):
                if not fail_soft:
                    raise outcome
                predictions.append(
                    Prediction(article.id, None, "",
                               FailureMarker("ProviderError", str(outcome)))
                )
                continue
            parsed = parse_response(task, outcome.raw_response)
            if isinstance(parsed, FailureMarker):
                predictions.append(Prediction(article.id, None, outcome.fingerprint, parsed))
            else:
                predictions.append(Prediction(article.id, parsed, outcome.fingerprint))
        sets.append(
            PredictionSet(
                task_id=task.task_id,
                provider=gateway.provider.name,
                run_index=run_index,
                predictions=tuple(predictions),
            )
        )
    return sets


def record_task_session(
    task: TaskSpec,
    corpus: Sequence[ArticleRecord],
    gateway: Gateway,
    runs: int = 1,
    model_id: str | None = None,
    temperature: float = 0.0,
    max_output: int = 1024,
    structure_labels: Mapping[str, Mapping[str, str]] | None = None,
    manifest_path: str | Path | None = None,
):
    """Record one task's completions into the gateway's cache archive.

    One record per (article, run); at temperature 0 on a deterministic
    provider the runs collapse to one cache entry per article. Resumable:
    already-recorded fingerprints are skipped. Returns the gateway's
    RecordSummary with per-item failures instead of aborting.
    """
    model = model_id or getattr(gateway.provider, "model_id", "unknown-model")
    items = []
    for run_index in range(runs):
        for article in corpus:
            labels = structure_labels.get(article.id) if structure_labels is not None else None
            if task.task_id == "NARRATIVE_STRUCTURED" and labels is None:
                raise MissingStructureLabels(f"no component labels for article {article.id!r}")
            items.append((
                f"{article.id}/{task.task_id}/run{run_index}",
                CompletionRequest(
                    model_id=model,
                    prompt=task.prompt_template,
                    article_text=article_block(article, labels),
                    temperature=temperature,
                    max_output=max_output,
                    run_index=run_index,
                ),
            ))
    return gateway.record_session(items, manifest_path=manifest_path)


def run_path(root: str | Path, provider: str, task_id: str, run_index: int) -> Path:
    """Archive layout: runs/<provider>/<task>/run<k>.jsonl."""
    return Path(root) / provider / task_id / f"run{run_index}.jsonl"


def write_prediction_set(ps: PredictionSet, root: str | Path) -> Path:
    path = run_path(root, ps.provider, ps.task_id, ps.run_index)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for prediction in ps.predictions:
            handle.write(json.dumps(prediction.to_dict(), ensure_ascii=False) + "\n")
    return path


def read_prediction_set(path: str | Path, task_id: str = "", provider: str = "",
                        run_index: int = -1) -> PredictionSet:
    """Read one archive file; metadata defaults are inferred from the
    runs/<provider>/<task>/run<k>.jsonl layout when not given."""
    path = Path(path)
    if run_index < 0:
        match = re.fullmatch(r"run(\d+)\.jsonl", path.name)
        run_index = int(match.group(1)) if match else 0
    task_id = task_id or (path.parent.name if path.parent.name in TASK_IDS else "")
    provider = provider or (path.parent.parent.name if path.parent.parent != path.parent else "")
    predictions = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            if not line.strip():
                continue
            data = json.loads(line)
            failure = data.get("failure")
            predictions.append(
                Prediction(
                    article_id=data["article_id"],
                    label=data.get("label"),
                    raw_ref=data.get("raw_ref", ""),
                    failure=FailureMarker(**failure) if failure else None,
                )
            )
    return PredictionSet(task_id=task_id, provider=provider, run_index=run_index,
                         predictions=tuple(predictions))


def gold_label(article: ArticleRecord, task_id: str) -> str | None:
    """The article's gold label for one task, or None when unannotated."""
    if task_id in ("NARRATIVE", "NARRATIVE_STRUCTURED"):
        return article.gold_narrative
    if article.gold is None:
        return None
    slot = _TASK_SLOT[task_id]
    return render_label(getattr(article.gold, slot))


def structure_labels_from_gold(
    corpus: Sequence[ArticleRecord],
) -> dict[str, dict[str, str]]:
    """Oracle component labels for the structured narrative task, taken
    verbatim from gold annotations (articles without gold are skipped)."""
    labels: dict[str, dict[str, str]] = {}
    for article in corpus:
        if article.gold is None or article.gold.focus is None:
            continue
        labels[article.id] = {
            "hero": article.gold.hero,
            "villain": article.gold.villain,
            "victim": article.gold.victim,
            "focus": article.gold.focus.value,
        }
    return labels


def structure_labels_from_predictions(
    prediction_sets: Mapping[str, PredictionSet],
) -> dict[str, dict[str, str]]:
    """Noisy component labels chained from prior HERO/VILLAIN/VICTIM/FOCUS
    prediction runs; failed role predictions degrade to "None"."""
    missing = [t for t in ("HERO", "VILLAIN", "VICTIM", "FOCUS") if t not in prediction_sets]
    if missing:
        raise MissingStructureLabels(f"need prediction sets for {missing}")
    by_task = {t: prediction_sets[t].labels_by_article() for t in
               ("HERO", "VILLAIN", "VICTIM", "FOCUS")}
    article_ids = set(by_task["HERO"])
    labels: dict[str, dict[str, str]] = {}
    for article_id in article_ids:
        labels[article_id] = {
            "hero": by_task["HERO"].get(article_id) or NONE,
            "villain": by_task["VILLAIN"].get(article_id) or NONE,
            "victim": by_task["VICTIM"].get(article_id) or NONE,
            "focus": by_task["FOCUS"].get(article_id) or NONE,
        }
    return labels
