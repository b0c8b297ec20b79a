"""Narrative frame analysis toolkit.

Typed narrative-frame components, a declarative frame catalog with a
deterministic structure-to-frame matcher, LLM prediction tasks with
cached record/replay providers, evaluation and inter-annotator agreement
metrics, corpus analyses, and an unsupervised taxonomy bootstrap for new
domains.
"""

__version__ = "0.1.0"
