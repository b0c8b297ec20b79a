"""Unsupervised domain adaptation for new topics.

Two provider stages derive a stakeholder taxonomy from an unlabeled
corpus (e.g. political speeches): candidate hero/villain/victim entity
types are extracted per document, merged into one deduplicated sorted
list, and clustered into named stakeholder groups with a single call.
The resulting taxonomy uses the standard file format, and the component
task specs are regenerated for the new domain; focus/conflict/story
prompts change only in their topic tokens, so their label spaces and
wording otherwise stay fixed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template
from typing import Iterable, Sequence

from .core import ArticleRecord, EmptyInput, NarframeError, Taxonomy, TaxonomyClass, canon_label
from .gateway import CompletionRequest, Gateway
from .tasks import (
    FailureMarker,
    TaskSpec,
    article_block,
    build_task_specs,
    extract_json_object,
)

log = logging.getLogger(__name__)


class EmptyCandidates(NarframeError):
    """No candidate entities survived extraction; cannot cluster."""


class BootstrapError(NarframeError):
    """The single-shot clustering stage returned an unusable response."""


@dataclass(frozen=True)
class CandidateRoles:
    """Entity types one document frames as heroes, villains, and victims."""

    heroes: tuple[str, ...]
    villains: tuple[str, ...]
    victims: tuple[str, ...]

    def all(self) -> tuple[str, ...]:
        return self.heroes + self.villains + self.victims


def _template(name: str) -> Template:
    text = resources.files("narframe").joinpath(f"data/prompts/{name}.txt").read_text("utf-8")
    return Template(text.rstrip("\n"))


def extraction_request(article: ArticleRecord, model_id: str,
                       temperature: float = 0.0, run_index: int = 0) -> CompletionRequest:
    return CompletionRequest(
        model_id=model_id,
        prompt=_template("extract_candidates").template,
        article_text=article_block(article),
        temperature=temperature,
        run_index=run_index,
    )


def _string_list(value) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise ValueError("expected a list")
    return tuple(str(item).strip() for item in value if str(item).strip())


def parse_candidates(raw: str):
    """Parse the extraction reply into CandidateRoles, or a FailureMarker."""
    obj = extract_json_object(raw)
    if obj is None:
        return FailureMarker("NoJsonFound", raw[:120])
    fields = {str(k).strip().lower(): v for k, v in obj.items()}
    lists = {}
    for field in ("heroes", "villains", "victims"):
        if field not in fields:
            return FailureMarker("MissingField", field)
        try:
            lists[field] = _string_list(fields[field])
        except ValueError:
            return FailureMarker("UnknownLabel", f"{field} is not a list of strings")
    return CandidateRoles(**lists)


def extract_candidates(article: ArticleRecord, gateway: Gateway,
                       model_id: str | None = None):
    """Stage 1 for one document. Fail-soft: unusable replies come back as
    FailureMarkers and the document is skipped by the pipeline."""
    model = model_id or getattr(gateway.provider, "model_id", "unknown-model")
    record = gateway.complete(extraction_request(article, model))
    return parse_candidates(record.raw_response)


def merge_entities(entities: Iterable[str]) -> tuple[str, ...]:
    """Deduplicate case-insensitively (first spelling wins) and sort, so
    the clustering prompt is independent of document order."""
    seen: dict[str, str] = {}
    for entity in entities:
        entity = str(entity).strip()
        if not entity:
            continue
        seen.setdefault(entity.casefold(), entity)
    return tuple(seen[key] for key in sorted(seen))


def merge_candidates(batches: Iterable[CandidateRoles]) -> tuple[str, ...]:
    return merge_entities(entity for batch in batches for entity in batch.all())


def _sanitize_label(label: str) -> str:
    cleaned = canon_label(label)
    cleaned = "".join(ch if (ch.isalnum() or ch == "_") else "_" for ch in cleaned)
    while "__" in cleaned:
        cleaned = cleaned.replace("__", "_")
    return cleaned.strip("_")


def clustering_request(candidates: Sequence[str], topic: str, model_id: str,
                       temperature: float = 0.0) -> CompletionRequest:
    listing = "\n".join(f"- {entity}" for entity in candidates)
    return CompletionRequest(
        model_id=model_id,
        prompt=_template("cluster_stakeholders").substitute(topic=topic),
        article_text=f"Entities:\n{listing}",
        temperature=temperature,
    )


def cluster_stakeholders(
    candidates: Sequence[str],
    gateway: Gateway,
    topic: str,
    taxonomy_name: str | None = None,
    model_id: str | None = None,
) -> Taxonomy:
    """Stage 2: one clustering call over the merged candidate list.

    This stage is required and single-shot, so parse failures raise
    instead of degrading.
    """
    merged = merge_entities(candidates)
    if not merged:
        raise EmptyCandidates("no candidate entities to cluster")
    model = model_id or getattr(gateway.provider, "model_id", "unknown-model")
    record = gateway.complete(clustering_request(merged, topic, model))
    obj = extract_json_object(record.raw_response)
    if obj is None:
        raise BootstrapError("clustering reply contains no JSON object")
    fields = {str(k).strip().lower(): v for k, v in obj.items()}
    groups = fields.get("stakeholders")
    if not isinstance(groups, list) or not groups:
        raise BootstrapError("clustering reply lacks a stakeholders list")
    classes = []
    for group in groups:
        if not isinstance(group, dict) or "label" not in group:
            raise BootstrapError(f"malformed stakeholder group: {group!r}")
        label = _sanitize_label(str(group["label"]))
        if not label:
            raise BootstrapError(f"unusable stakeholder label: {group['label']!r}")
        classes.append(TaxonomyClass(label=label, description=str(group.get("description", "")).strip()))
    try:
        return Taxonomy(
            name=taxonomy_name or _sanitize_label(topic).lower(),
            topic=topic,
            classes=tuple(classes),
        )
    except ValueError as exc:
        raise BootstrapError(f"provider returned an invalid taxonomy: {exc}") from exc


def transfer_tasks(
    taxonomy: Taxonomy,
    topic: str,
    issue: str | None = None,
    split_roles: bool = False,
) -> dict[str, TaskSpec]:
    """Regenerate the component TaskSpecs for a new domain.

    The character tasks get the new class list; focus, conflict, and
    story keep their label spaces and differ only in topic tokens
    (`issue` defaults to "<topic> crisis"). Narrative tasks need a frame
    catalog, which a bootstrapped domain does not have.
    """
    return build_task_specs(
        taxonomy, catalog=None, topic=topic, issue=issue, split_roles=split_roles,
    )


@dataclass(frozen=True)
class BootstrapResult:
    taxonomy: Taxonomy
    candidates: tuple[str, ...]
    skipped: tuple[tuple[str, FailureMarker], ...]
    tasks: dict[str, TaskSpec]


def run_bootstrap(
    corpus: Sequence[ArticleRecord],
    gateway: Gateway,
    topic: str,
    model_id: str | None = None,
    taxonomy_name: str | None = None,
) -> BootstrapResult:
    """The full unsupervised pipeline over a speech corpus.

    Extraction runs per document with the gateway's concurrency bound;
    documents with unusable replies are skipped and reported. The merged
    candidates feed one clustering call, and the component tasks are
    rebuilt from the discovered taxonomy.
    """
    if not corpus:
        raise EmptyInput("bootstrap needs at least one document")
    model = model_id or getattr(gateway.provider, "model_id", "unknown-model")
    requests_batch = [extraction_request(article, model) for article in corpus]
    outcomes = gateway.complete_many(requests_batch)

    batches = []
    skipped: list[tuple[str, FailureMarker]] = []
    for article, outcome in zip(corpus, outcomes):
        if isinstance(outcome, NarframeError):
            skipped.append((article.id, FailureMarker("ProviderError", str(outcome))))
            continue
        parsed = parse_candidates(outcome.raw_response)
        if isinstance(parsed, FailureMarker):
            log.warning("skipping document %s: %s", article.id, parsed.kind)
            skipped.append((article.id, parsed))
            continue
        batches.append(parsed)
    candidates = merge_candidates(batches)
    taxonomy = cluster_stakeholders(candidates, gateway, topic,
                                    taxonomy_name=taxonomy_name, model_id=model)
    tasks = transfer_tasks(taxonomy, topic)
    return BootstrapResult(
        taxonomy=taxonomy,
        candidates=candidates,
        skipped=tuple(skipped),
        tasks=tasks,
    )


def write_task_specs(tasks: dict[str, TaskSpec], out_dir: str | Path) -> list[Path]:
    """Write one JSON TaskSpec file per task (stable field order)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for task_id in sorted(tasks):
        path = out_dir / f"{task_id.lower()}.json"
        path.write_text(
            json.dumps(tasks[task_id].to_dict(), indent=2, ensure_ascii=False, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        paths.append(path)
    return paths
