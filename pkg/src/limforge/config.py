"""Run configuration: flat INI sections, validated fields, stable hash.

Every tunable constant is surfaced as a named key so the experiment grid
can sweep it. The config hash identifies a parameter set across runs;
path settings are excluded from the hash so relocating a workspace never
invalidates completed stages.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping

from limforge.citations import CITED_BY_CAP
from limforge.corpus import canonical_json
from limforge.generator import DEFAULT_CONTEXT_BUDGET, DEFAULT_MAX_STATEMENTS
from limforge.rag import (
    DEFAULT_CHUNK_TOKENS,
    DEFAULT_FUSION_WEIGHT,
    DEFAULT_RETRIEVE_K,
    INDEX_VARIANTS,
    RERANK_THRESHOLD,
)
from limforge.refinery import GROUNDEDNESS_THRESHOLD

INPUT_SCOPES = ("top3_sections", "all_sections")
GT_SCOPES = ("author", "reviewer", "merged")
RETRIEVER_MODES = ("rerank", "vanilla_k")
TP_MODES = ("raw_pairs", "dedup_matching")

ENV_API_KEY = "LIMFORGE_API_KEY"
ENV_API_BASE = "LIMFORGE_API_BASE"
ENV_EMBED_MODEL = "LIMFORGE_EMBED_MODEL"


class ConfigError(Exception):
    """Raised for unreadable, unknown, or out-of-range configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    # models
    extractor_model: str = "gpt-4o-mini"
    generator_model: str = "gpt-4o-mini"
    judge_model: str = "gpt-4o-mini"
    embed_model: str = "text-embedding-ada-002"
    # retrieval
    retrieve_k: int = DEFAULT_RETRIEVE_K
    rerank_threshold: int = RERANK_THRESHOLD
    lexical_weight: float = DEFAULT_FUSION_WEIGHT
    dense_weight: float = DEFAULT_FUSION_WEIGHT
    top_sections: int = 3
    vanilla_k: int = 3
    chunk_tokens: int = DEFAULT_CHUNK_TOKENS
    retriever_mode: str = "rerank"
    # experiment cell
    index_variant: str = "cited_in_by"
    input_scope: str = "top3_sections"
    gt_scope: str = "merged"
    tp_mode: str = "dedup_matching"
    semantic_k: int = 5
    cited_by_cap: int = CITED_BY_CAP
    random_corpus_size: int = 100
    # generation
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    max_statements: int = DEFAULT_MAX_STATEMENTS
    # refinement
    groundedness_threshold: float = GROUNDEDNESS_THRESHOLD
    # run
    seed: int = 0
    workers: int = 1
    # paths, excluded from the config hash
    corpus_dir: str = "corpus"
    run_dir: str = "runs"
    cache_dir: str = ""
    fixture_dir: str = ""
    snapshot_path: str = ""
    sidecar_url: str = ""

    def __post_init__(self) -> None:
        for name in ("extractor_model", "generator_model", "judge_model", "embed_model"):
            if not getattr(self, name).strip():
                raise ConfigError(f"{name} cannot be empty")
        if self.retrieve_k < 1:
            raise ConfigError("retrieval k must be at least 1")
        if not 1 <= self.rerank_threshold <= 10:
            raise ConfigError("rerank threshold must lie in 1..10")
        for name in ("lexical_weight", "dense_weight"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if abs(self.lexical_weight + self.dense_weight - 1.0) > 1e-9:
            raise ConfigError("fusion weights must sum to 1")
        if self.top_sections < 1 or self.vanilla_k < 1 or self.chunk_tokens < 1:
            raise ConfigError("top_sections, vanilla_k, chunk_tokens must be at least 1")
        if self.retriever_mode not in RETRIEVER_MODES:
            raise ConfigError(f"unknown retriever_mode: {self.retriever_mode}")
        if self.index_variant not in INDEX_VARIANTS:
            raise ConfigError(f"unknown index_variant: {self.index_variant}")
        if self.input_scope not in INPUT_SCOPES:
            raise ConfigError(f"unknown input_scope: {self.input_scope}")
        if self.gt_scope not in GT_SCOPES:
            raise ConfigError(f"unknown gt_scope: {self.gt_scope}")
        if self.tp_mode not in TP_MODES:
            raise ConfigError(f"unknown tp_mode: {self.tp_mode}")
        if self.semantic_k < 0:
            raise ConfigError("semantic_k cannot be negative")
        if self.cited_by_cap < 1 or self.random_corpus_size < 1:
            raise ConfigError("cited_by_cap and random_corpus_size must be at least 1")
        if self.context_budget < 1 or self.max_statements < 1:
            raise ConfigError("context_budget and max_statements must be at least 1")
        if not 0.0 < self.groundedness_threshold <= 1.0:
            raise ConfigError("groundedness threshold must lie in (0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")


# INI section -> {key -> field}; every field appears exactly once.
_SECTIONS: dict[str, dict[str, str]] = {
    "models": {
        "extractor": "extractor_model",
        "generator": "generator_model",
        "judge": "judge_model",
        "embedder": "embed_model",
    },
    "retrieval": {
        "k": "retrieve_k",
        "rerank_threshold": "rerank_threshold",
        "lexical_weight": "lexical_weight",
        "dense_weight": "dense_weight",
        "top_sections": "top_sections",
        "vanilla_k": "vanilla_k",
        "chunk_tokens": "chunk_tokens",
        "retriever_mode": "retriever_mode",
    },
    "experiment": {
        "index_variant": "index_variant",
        "input_scope": "input_scope",
        "gt_scope": "gt_scope",
        "tp_mode": "tp_mode",
        "semantic_k": "semantic_k",
        "cited_by_cap": "cited_by_cap",
        "random_corpus_size": "random_corpus_size",
    },
    "generation": {
        "context_budget": "context_budget",
        "max_statements": "max_statements",
    },
    "refinement": {
        "groundedness_threshold": "groundedness_threshold",
    },
    "run": {
        "seed": "seed",
        "workers": "workers",
    },
    "paths": {
        "corpus_dir": "corpus_dir",
        "run_dir": "run_dir",
        "cache_dir": "cache_dir",
        "fixture_dir": "fixture_dir",
        "snapshot": "snapshot_path",
    },
    # Not a path: the scorer's presence changes evaluation artifacts, so the
    # URL stays inside the config hash unlike the storage locations above.
    "sidecar": {
        "url": "sidecar_url",
    },
}

PATH_FIELDS = frozenset(_SECTIONS["paths"].values())
# Fields that change where or how fast a run executes without changing its
# results; they stay out of the config hash so resuming tolerates them.
UNHASHED_FIELDS = PATH_FIELDS | {"workers"}

_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _convert(field_name: str, raw: str) -> object:
    kind = _FIELD_TYPES[field_name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {field_name}: {raw!r}") from exc
    return raw


def load_config(
    path: str | Path, env: Mapping[str, str] | None = None
) -> PipelineConfig:
    """Parse an INI file; unknown sections or keys are errors, not noise."""
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    overrides: dict[str, object] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section: [{section}]")
        keys = _SECTIONS[section]
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            overrides[keys[key]] = _convert(keys[key], raw.strip())
    try:
        config = PipelineConfig(**overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return apply_env(config, env) if env is not None else config


def apply_env(
    config: PipelineConfig, env: Mapping[str, str] | None = None
) -> PipelineConfig:
    if env is None:
        env = os.environ
    override = env.get(ENV_EMBED_MODEL, "").strip()
    if override:
        return replace(config, embed_model=override)
    return config


def render_config(config: PipelineConfig) -> str:
    """INI text round-trippable through load_config."""
    lines: list[str] = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key, field_name in keys.items():
            lines.append(f"{key} = {getattr(config, field_name)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(config: PipelineConfig) -> str:
    payload = {
        f.name: getattr(config, f.name)
        for f in fields(PipelineConfig)
        if f.name not in UNHASHED_FIELDS
    }
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:16]
