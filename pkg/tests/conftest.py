from __future__ import annotations

import json
from pathlib import Path

import pytest

from narframe.catalog import climate_catalog, climate_taxonomy
from narframe.core import read_corpus
from narframe.gateway import Gateway, StaticProvider

FIXTURES = Path(__file__).parent / "fixtures"
GOLDENS = FIXTURES / "goldens"


@pytest.fixture(scope="session")
def taxonomy():
    return climate_taxonomy()


@pytest.fixture(scope="session")
def catalog():
    return climate_catalog()


@pytest.fixture(scope="session")
def corpus(taxonomy):
    return read_corpus(FIXTURES / "climate_corpus.jsonl", taxonomy)


@pytest.fixture(scope="session")
def speeches(taxonomy):
    return read_corpus(FIXTURES / "covid_speeches.jsonl", taxonomy)


def find_article(corpus, article_text: str):
    for article in corpus:
        if article.text in article_text:
            return article
    raise AssertionError("request does not contain any fixture article")


def gold_responder(corpus):
    """Scripted provider brain answering every task prompt from gold labels."""

    def respond(req):
        prompt = req.prompt
        article = find_article(corpus, req.article_text)
        gold = article.gold
        if "politician's address" in prompt:
            raise AssertionError("extraction prompt sent to the climate responder")
        if "who is framed as a hero, villain or a victim" in prompt:
            return json.dumps({
                "hero_class": gold.hero,
                "villain_class": gold.villain,
                "victim_class": gold.victim,
                "focus": gold.focus.value,
            })
        if "who is framed as a hero in it" in prompt:
            return json.dumps({"hero_class": gold.hero})
        if "who is framed as a villain in it" in prompt:
            return json.dumps({"villain_class": gold.villain})
        if "who is framed as a victim in it" in prompt:
            return json.dumps({"victim_class": gold.victim})
        if "focusing on" in prompt and "cultural story" not in prompt:
            return json.dumps({"focus": gold.focus.value})
        if "cultural story" in prompt:
            return json.dumps({"story": gold.story.value})
        if "how it relates to" in prompt:
            return json.dumps({"conflict": gold.conflict.value})
        if "main narrative" in prompt:
            return json.dumps({"narrative": article.gold_narrative or "ALL_TALK"})
        raise AssertionError(f"unrecognized prompt: {prompt[:80]!r}")

    return respond


# Canned bootstrap fixture data: per-speech candidate entity types and the
# stakeholder clustering the scripted provider returns for them.
COVID_CANDIDATES = {
    "de1": {
        "heroes": ["healthcare workers", "General Public", "scientists"],
        "villains": ["the virus"],
        "victims": ["elderly people", "general public"],
    },
    "uk1": {
        "heroes": ["NHS staff", "Healthcare Workers"],
        "villains": ["coronavirus"],
        "victims": ["vulnerable people", "the health service"],
    },
    "au1": {
        "heroes": ["government", "science experts"],
        "villains": ["pandemic"],
        "victims": ["small businesses", "workers", "the economy"],
    },
}

COVID_CLUSTERS = [
    {"label": "HEALTHCARE", "description": "frontline workers, medical professionals, and health institutions"},
    {"label": "VULNERABLE_POPULATION", "description": "individuals at higher risk of severe illness"},
    {"label": "GENERAL_PUBLIC", "description": "the general public, individuals, and communities"},
    {"label": "GOVERNMENT_POLITICIANS", "description": "national and regional governments and policymakers"},
    {"label": "BUSINESS_ECONOMY", "description": "businesses, workers, and the broader economy"},
    {"label": "SCIENCE_EXPERTS", "description": "scientists, researchers, and research institutions"},
    {"label": "FAITH_GROUPS", "description": "faith-based organizations"},
    {"label": "PANDEMIC", "description": "the virus itself and the pandemic"},
    {"label": "GLOBAL_EFFORTS", "description": "international organizations and worldwide cooperation"},
]


def covid_responder(speeches):
    """Scripted provider brain for the two bootstrap stages."""

    def respond(req):
        if "Cluster them" in req.prompt:
            return json.dumps({"stakeholders": COVID_CLUSTERS})
        if "politician's address" in req.prompt:
            speech = find_article(speeches, req.article_text)
            return json.dumps(COVID_CANDIDATES[speech.id])
        raise AssertionError(f"unrecognized prompt: {req.prompt[:80]!r}")

    return respond


@pytest.fixture
def gold_gateway(corpus, tmp_path):
    provider = StaticProvider(gold_responder(corpus), name="scripted",
                              model_id="scripted-model-1")
    return Gateway(provider, cache_dir=tmp_path / "cache")


@pytest.fixture
def covid_gateway(speeches, tmp_path):
    provider = StaticProvider(covid_responder(speeches), name="scripted",
                              model_id="scripted-model-1")
    return Gateway(provider, cache_dir=tmp_path / "cache")
