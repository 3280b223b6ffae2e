"""Staged pipeline runs: extract, refine, enrich, index, generate, evaluate.

A run directory is keyed by the config hash. Each stage writes one artifact
file per paper stamped with that hash, so a rerun skips finished work and a
config change recomputes everything. A failure in one paper is recorded and
never blocks or alters the others.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

from limforge.citations import (
    EnrichmentError,
    HTTPClient,
    LiveHTTPClient,
    ReplayHTTPClient,
    build_manifest,
    load_metadata_snapshot,
    manifest_to_dict,
    resolve_fulltext,
)
from limforge.config import (
    ENV_API_BASE,
    ENV_API_KEY,
    PATH_FIELDS,
    PipelineConfig,
    config_hash,
    render_config,
)
from limforge.corpus import (
    CorpusStore,
    GoldAnnotation,
    LimitationSet,
    PaperRecord,
    Section,
    canonical_json,
    ingest_paper,
    ingest_reviews,
    limitation_set_from_dict,
    limitation_set_to_dict,
)
from limforge.gateway import Backend, LLMGateway, MockBackend, OpenAICompatBackend
from limforge.generator import (
    generate_rag,
    generate_vanilla,
    run_from_dict,
    run_to_dict,
    sections_text,
)
from limforge.pointwise import SidecarClient, evaluate_sets, evaluation_to_dict
from limforge.rag import (
    INDEX_VARIANTS,
    build_index,
    build_reference_embedding,
    chunk_by_section,
    load_index,
    rank_sections,
    rerank,
    retrieve,
    sample_random_corpus,
    save_index,
    top_sections,
)
from limforge.refinery import refine_paper
from limforge.report import corpus_csv, corpus_markdown, corpus_row, emit_report, load_evaluations
from limforge.spans import (
    extract_spans,
    extraction_from_dict,
    extraction_to_dict,
    score_extraction,
)

logger = logging.getLogger(__name__)

DEFAULT_API_BASE = "https://api.openai.com/v1"

# Seeds for the reference limitation embedding when a paper's own refined
# statements are empty; generic phrasing, never paper-specific.
FALLBACK_REFERENCE_SEEDS = (
    "A limitation of this work is the restricted size and scope of the dataset.",
    "The approach may not generalize beyond the evaluated settings and domains.",
)

_VARIANT_DIRECTIONS = {
    "cited_in": ("cited_in",),
    "cited_by": ("cited_by",),
    "cited_in_by": ("cited_in", "cited_by"),
    "cited_in_by_semantic": ("cited_in", "cited_by", "semantic"),
}


class PipelineError(Exception):
    """Raised when a stage cannot produce its artifact for a paper."""


@dataclass(frozen=True)
class StageResult:
    paper_id: str
    stage: str
    status: str  # done, skipped, failed
    detail: str = ""


@dataclass(frozen=True)
class RunResult:
    run_dir: Path
    config_hash: str
    stage_results: tuple[StageResult, ...]

    def failures(self) -> tuple[StageResult, ...]:
        return tuple(r for r in self.stage_results if r.status == "failed")


@dataclass
class RunContext:
    """Live handles shared by every stage of one run."""

    config: PipelineConfig
    hash: str
    run_root: Path
    store: CorpusStore
    gateway: LLMGateway
    paper_ids: tuple[str, ...]
    http_client: HTTPClient | None = None
    fetcher: Callable[[dict], dict] | None = None
    metadata_rows: list[dict] = field(default_factory=list)
    sidecar: SidecarClient | None = None
    now: str = ""
    stages: tuple[str, ...] = ()

    def paper_dir(self, paper_id: str) -> Path:
        return self.run_root / "papers" / paper_id


# -- corpus ingestion --------------------------------------------------------


def ingest_corpus(src_dir: str | Path, store: CorpusStore) -> list[str]:
    """Load papers/, reviews/, gold/ from a source directory into the store.

    Reviews and gold files are matched to papers by file stem; a review or
    gold file without a matching paper is an error.
    """
    src = Path(src_dir)
    papers_dir = src / "papers"
    if not papers_dir.is_dir():
        raise PipelineError(f"no papers directory under {src}")
    ids: list[str] = []
    stems: dict[str, str] = {}
    for path in sorted(papers_dir.glob("*.json")):
        paper = ingest_paper(path)
        store.store(paper)
        ids.append(paper.paper_id)
        stems[path.stem] = paper.paper_id
    for path in sorted((src / "reviews").glob("*.json")) if (src / "reviews").is_dir() else []:
        if path.stem not in stems:
            raise PipelineError(f"review file {path.name} matches no ingested paper")
        reviews = ingest_reviews(path)
        if reviews.paper_id != stems[path.stem]:
            reviews = replace(reviews, paper_id=stems[path.stem])
        store.store(reviews)
    gold_dir = src / "gold"
    for path in sorted(gold_dir.glob("*.txt")) if gold_dir.is_dir() else []:
        if path.stem not in stems:
            raise PipelineError(f"gold file {path.name} matches no ingested paper")
        store.store(
            GoldAnnotation(
                paper_id=stems[path.stem], gold_text=path.read_text(encoding="utf-8")
            )
        )
    return ids


# -- backend wiring -----------------------------------------------------------


def make_gateway(
    config: PipelineConfig,
    mock: bool = False,
    env: Mapping[str, str] | None = None,
    backend: Backend | None = None,
) -> LLMGateway:
    if backend is None:
        if mock:
            backend = MockBackend(
                fixture_dir=config.fixture_dir or None, embedding_mode="hashed"
            )
        else:
            if env is None:
                env = os.environ
            api_key = env.get(ENV_API_KEY, "")
            if not api_key:
                raise PipelineError(f"{ENV_API_KEY} is not set; use --mock for fixture runs")
            backend = OpenAICompatBackend(
                api_base=env.get(ENV_API_BASE, "") or DEFAULT_API_BASE, api_key=api_key
            )
    return LLMGateway(
        backend,
        embed_model=config.embed_model,
        cache_dir=config.cache_dir or None,
    )


def snapshot_document_fetcher(row: dict) -> dict:
    """Full text from the metadata snapshot row itself; rows carry documents inline."""
    document = row.get("document")
    if not isinstance(document, dict):
        raise EnrichmentError(f"snapshot row {row.get('id')!r} has no inline document")
    return document


# -- stage plumbing -----------------------------------------------------------


def stages_for(config: PipelineConfig) -> tuple[str, ...]:
    if config.index_variant == "none":
        return ("extract", "refine", "generate", "evaluate")
    if config.index_variant == "random_k":
        return ("extract", "refine", "index", "generate", "evaluate")
    return ("extract", "refine", "enrich", "index", "generate", "evaluate")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(payload), encoding="utf-8")


def _load_stage(ctx: RunContext, paper_id: str, stage: str) -> dict | None:
    path = ctx.paper_dir(paper_id) / f"{stage}.json"
    if not path.is_file():
        return None
    data = json.loads(path.read_text(encoding="utf-8"))
    return data if data.get("config_hash") == ctx.hash else None


# -- stages -------------------------------------------------------------------


def _stage_extract(ctx: RunContext, paper: PaperRecord, state: dict) -> dict:
    extraction = extract_spans(paper)
    if extraction.mode == "none":
        raise PipelineError("no limitation spans found")
    return extraction_to_dict(extraction)


def _stage_refine(ctx: RunContext, paper: PaperRecord, state: dict) -> dict:
    extraction = extraction_from_dict(state["extract"])
    reviews = None
    if ctx.store.exists(paper.paper_id, "reviews"):
        reviews = ctx.store.load(paper.paper_id, "reviews")
    output = refine_paper(
        extraction,
        reviews,
        ctx.gateway,
        ctx.config.extractor_model,
        threshold=ctx.config.groundedness_threshold,
    )
    for limset in (output.author_set, output.reviewer_set, output.merged_set):
        if limset is not None:
            ctx.store.store(limset)
    return {
        "author": limitation_set_to_dict(output.author_set),
        "reviewer": (
            limitation_set_to_dict(output.reviewer_set)
            if output.reviewer_set is not None
            else None
        ),
        "merged": limitation_set_to_dict(output.merged_set),
        "dropped": [
            {"text": d.text, "heading": d.heading, "reason": d.reason, "score": d.score}
            for d in output.dropped
        ],
    }


def _stage_enrich(ctx: RunContext, paper: PaperRecord, state: dict) -> dict:
    if ctx.http_client is None:
        raise PipelineError("enrichment requires an HTTP client or fixtures")
    directions = _VARIANT_DIRECTIONS[ctx.config.index_variant]
    manifest = build_manifest(
        paper,
        ctx.http_client,
        directions=directions,
        semantic_k=ctx.config.semantic_k,
        cited_by_cap=ctx.config.cited_by_cap,
        now=ctx.now,
    )
    resolved = resolve_fulltext(
        list(manifest.records), ctx.metadata_rows, ctx.fetcher or snapshot_document_fetcher, ctx.store
    )
    manifest = replace(manifest, records=tuple(resolved))
    return {
        "manifest": manifest_to_dict(manifest),
        "resolved_ids": sorted(
            {r.fulltext_id for r in resolved if r.fulltext_id and r.fulltext_id != paper.paper_id}
        ),
    }


def _neighborhood_papers(ctx: RunContext, paper: PaperRecord, state: dict) -> list[PaperRecord]:
    if ctx.config.index_variant == "random_k":
        candidates = [pid for pid in ctx.paper_ids if pid != paper.paper_id]
        pool = [ctx.store.load(pid, "paper") for pid in sorted(candidates)]
        n = min(ctx.config.random_corpus_size, len(pool))
        if n == 0:
            return []
        return sample_random_corpus(pool, n, seed=ctx.config.seed)
    ids = state["enrich"]["resolved_ids"]
    return [ctx.store.load(pid, "paper") for pid in ids]


def _stage_index(ctx: RunContext, paper: PaperRecord, state: dict) -> dict:
    neighbors = _neighborhood_papers(ctx, paper, state)
    chunks = chunk_by_section(neighbors, ctx.config.chunk_tokens)
    if chunks:
        index = build_index(chunks, ctx.config.index_variant, ctx.gateway)
        save_index(index, ctx.paper_dir(paper.paper_id) / "index")
    return {
        "chunk_count": len(chunks),
        "source_papers": sorted({p.paper_id for p in neighbors}),
    }


def _generation_sections(ctx: RunContext, paper: PaperRecord, state: dict) -> list[Section]:
    if ctx.config.input_scope == "all_sections":
        return list(paper.sections)
    seeds = [s["text"] for s in state["refine"]["author"]["statements"]]
    reference = build_reference_embedding(
        seeds if seeds else list(FALLBACK_REFERENCE_SEEDS), ctx.gateway
    )
    ranked = rank_sections(paper, reference, ctx.gateway)
    return top_sections(ranked, ctx.config.top_sections)


def _stage_generate(ctx: RunContext, paper: PaperRecord, state: dict) -> dict:
    config = ctx.config
    sections = _generation_sections(ctx, paper, state)
    if config.index_variant == "none":
        run = generate_vanilla(
            paper.paper_id,
            sections,
            ctx.gateway,
            config.generator_model,
            context_budget=config.context_budget,
            max_statements=config.max_statements,
            input_scope=config.input_scope,
        )
        retrieval = None
    else:
        query = sections_text(sections)
        if state["index"]["chunk_count"] == 0:
            retrieved, kept, decisions = [], [], []
        else:
            index = load_index(ctx.paper_dir(paper.paper_id) / "index")
            if config.retriever_mode == "vanilla_k":
                retrieved = retrieve(
                    query,
                    index,
                    ctx.gateway,
                    k=config.vanilla_k,
                    lexical_weight=config.lexical_weight,
                    dense_weight=config.dense_weight,
                )
                kept, decisions = list(retrieved), []
            else:
                retrieved = retrieve(
                    query,
                    index,
                    ctx.gateway,
                    k=config.retrieve_k,
                    lexical_weight=config.lexical_weight,
                    dense_weight=config.dense_weight,
                )
                kept, decisions = rerank(
                    retrieved,
                    query,
                    ctx.gateway,
                    config.generator_model,
                    threshold=config.rerank_threshold,
                )
        run = generate_rag(
            paper.paper_id,
            sections,
            kept,
            ctx.gateway,
            config.generator_model,
            index_variant=config.index_variant,
            max_statements=config.max_statements,
            input_scope=config.input_scope,
        )
        retrieval = {
            "retrieved": [
                {
                    "chunk_id": c.chunk_id,
                    "lexical_score": c.lexical_score,
                    "dense_score": c.dense_score,
                    "fused_score": c.fused_score,
                    "rank": c.rank,
                }
                for c in retrieved
            ],
            "decisions": [
                {"chunk_id": d.chunk_id, "relevance": d.relevance, "kept": d.kept}
                for d in decisions
            ],
            "kept": [c.chunk_id for c in kept],
        }
    ctx.store.store(run.statements)
    return {
        "run": run_to_dict(run),
        "retrieval": retrieval,
        "section_indices": [s.index for s in sections],
    }


def _stage_evaluate(ctx: RunContext, paper: PaperRecord, state: dict) -> dict:
    gt_data = state["refine"][ctx.config.gt_scope]
    if gt_data is None:
        raise PipelineError(f"paper has no {ctx.config.gt_scope} limitation set")
    gt_set: LimitationSet = limitation_set_from_dict(gt_data)
    gen_run = run_from_dict(state["generate"]["run"])
    evaluation = evaluate_sets(
        gt_set, gen_run.statements, ctx.gateway, ctx.config.judge_model, sidecar=ctx.sidecar
    )
    return {"gt_scope": ctx.config.gt_scope, **evaluation_to_dict(evaluation)}


_STAGE_FNS: dict[str, Callable[[RunContext, PaperRecord, dict], dict]] = {
    "extract": _stage_extract,
    "refine": _stage_refine,
    "enrich": _stage_enrich,
    "index": _stage_index,
    "generate": _stage_generate,
    "evaluate": _stage_evaluate,
}


def _run_paper(ctx: RunContext, paper_id: str) -> list[StageResult]:
    results: list[StageResult] = []
    try:
        paper = ctx.store.load(paper_id, "paper")
    except Exception as exc:
        logger.error("paper %s cannot be loaded: %s", paper_id, exc)
        return [StageResult(paper_id, "load", "failed", str(exc))]
    state: dict[str, dict] = {}
    for stage in ctx.stages or stages_for(ctx.config):
        cached = _load_stage(ctx, paper_id, stage)
        if cached is not None:
            state[stage] = cached
            results.append(StageResult(paper_id, stage, "skipped"))
            continue
        try:
            payload = _STAGE_FNS[stage](ctx, paper, state)
        except Exception as exc:
            # Isolation contract: record the failure, leave other papers alone.
            logger.exception("paper %s failed at stage %s", paper_id, stage)
            _write_json(
                ctx.paper_dir(paper_id) / "error.json",
                {"config_hash": ctx.hash, "stage": stage, "error": str(exc)},
            )
            results.append(StageResult(paper_id, stage, "failed", str(exc)))
            return results
        payload = {"config_hash": ctx.hash, "paper_id": paper_id, **payload}
        _write_json(ctx.paper_dir(paper_id) / f"{stage}.json", payload)
        state[stage] = payload
        results.append(StageResult(paper_id, stage, "done"))
    return results


def cell_label(config: PipelineConfig) -> str:
    return f"{config.index_variant}/{config.input_scope}/{config.retriever_mode}"


def run_pipeline(
    config: PipelineConfig,
    paper_ids: Sequence[str] | None = None,
    mock: bool = False,
    gateway: LLMGateway | None = None,
    http_client: HTTPClient | None = None,
    fetcher: Callable[[dict], dict] | None = None,
    sidecar: SidecarClient | None = None,
    env: Mapping[str, str] | None = None,
    now: str = "",
    until: str | None = None,
) -> RunResult:
    """Execute every stage for every paper; resume from existing artifacts.

    The run directory is ``<run_dir>/run-<config-hash>``. ``until`` stops
    after the named stage. Report files are regenerated after any call that
    reaches the evaluate stage.
    """
    stages = stages_for(config)
    if until is not None:
        if until not in stages:
            raise PipelineError(
                f"stage {until!r} is not part of variant {config.index_variant!r}"
            )
        stages = stages[: stages.index(until) + 1]
    run_hash = config_hash(config)
    run_root = Path(config.run_dir) / f"run-{run_hash}"
    run_meta_path = run_root / "run.json"
    if paper_ids is None:
        if run_meta_path.is_file():
            paper_ids = json.loads(run_meta_path.read_text(encoding="utf-8"))["paper_ids"]
        else:
            paper_ids = CorpusStore(config.corpus_dir).list_papers()
    if not paper_ids:
        raise PipelineError("no papers to run; ingest a corpus first")
    ids = tuple(paper_ids)
    run_root.mkdir(parents=True, exist_ok=True)
    # The recorded config captures the experiment, not the execution: local
    # paths and the worker count are reset so reruns stay byte-identical.
    portable = replace(config, workers=1, **{name: "" for name in PATH_FIELDS})
    (run_root / "config.ini").write_text(render_config(portable), encoding="utf-8")
    _write_json(
        run_meta_path,
        {
            "config_hash": run_hash,
            "label": cell_label(config),
            "tp_mode": config.tp_mode,
            "gt_scope": config.gt_scope,
            "paper_ids": list(ids),
            "created_at": now,
        },
    )
    if gateway is None:
        gateway = make_gateway(config, mock=mock, env=env)
    needs_http = "enrich" in stages
    if http_client is None and needs_http:
        if mock:
            if not config.fixture_dir:
                raise PipelineError("mock enrichment requires fixture_dir")
            http_client = ReplayHTTPClient(config.fixture_dir)
        else:
            http_client = LiveHTTPClient()
    metadata_rows = (
        load_metadata_snapshot(config.snapshot_path) if config.snapshot_path else []
    )
    if sidecar is None and config.sidecar_url:
        sidecar = SidecarClient(config.sidecar_url)
    ctx = RunContext(
        config=config,
        hash=run_hash,
        run_root=run_root,
        store=CorpusStore(config.corpus_dir),
        gateway=gateway,
        paper_ids=ids,
        http_client=http_client,
        fetcher=fetcher,
        metadata_rows=metadata_rows,
        sidecar=sidecar,
        now=now,
        stages=stages,
    )
    results: list[StageResult] = []
    if config.workers == 1:
        for paper_id in ids:
            results.extend(_run_paper(ctx, paper_id))
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            for rows in pool.map(lambda pid: _run_paper(ctx, pid), ids):
                results.extend(rows)
    if "evaluate" in stages:
        emit_report(run_root)
    return RunResult(
        run_dir=run_root, config_hash=run_hash, stage_results=tuple(results)
    )


# -- experiment matrices -------------------------------------------------------


@dataclass(frozen=True)
class MatrixCell:
    index_variant: str
    input_scope: str = "top3_sections"
    retriever_mode: str = "rerank"

    def label(self) -> str:
        return f"{self.index_variant}/{self.input_scope}/{self.retriever_mode}"

    def apply(self, config: PipelineConfig) -> PipelineConfig:
        return replace(
            config,
            index_variant=self.index_variant,
            input_scope=self.input_scope,
            retriever_mode=self.retriever_mode,
        )


@dataclass(frozen=True)
class ExperimentMatrix:
    cells: tuple[MatrixCell, ...]

    def __post_init__(self) -> None:
        if not self.cells:
            raise ValueError("an experiment matrix needs at least one cell")
        labels = [cell.label() for cell in self.cells]
        if len(set(labels)) != len(labels):
            raise ValueError("matrix cells must be unique")


def variant_sweep_matrix(config: PipelineConfig) -> ExperimentMatrix:
    """All index variants at the config's scope and retriever mode."""
    return ExperimentMatrix(
        cells=tuple(
            MatrixCell(variant, config.input_scope, config.retriever_mode)
            for variant in INDEX_VARIANTS
        )
    )


@dataclass(frozen=True)
class MatrixResult:
    matrix_dir: Path
    runs: tuple[RunResult, ...]


def run_matrix(
    matrix: ExperimentMatrix,
    config: PipelineConfig,
    paper_ids: Sequence[str] | None = None,
    mock: bool = False,
    gateway: LLMGateway | None = None,
    http_client: HTTPClient | None = None,
    fetcher: Callable[[dict], dict] | None = None,
    sidecar: SidecarClient | None = None,
    env: Mapping[str, str] | None = None,
    now: str = "",
) -> MatrixResult:
    """One pipeline run per cell plus a comparison table across cells."""
    if gateway is None:
        gateway = make_gateway(config, mock=mock, env=env)
    runs: list[RunResult] = []
    rows = []
    for cell in matrix.cells:
        cell_config = cell.apply(config)
        run = run_pipeline(
            cell_config,
            paper_ids,
            mock=mock,
            gateway=gateway,
            http_client=http_client,
            fetcher=fetcher,
            sidecar=sidecar,
            env=env,
            now=now,
        )
        runs.append(run)
        rows.append(
            corpus_row(cell.label(), load_evaluations(run.run_dir), config.tp_mode)
        )
    matrix_hash = hashlib.sha256(
        canonical_json([run.config_hash for run in runs]).encode("utf-8")
    ).hexdigest()[:16]
    matrix_dir = Path(config.run_dir) / f"matrix-{matrix_hash}"
    matrix_dir.mkdir(parents=True, exist_ok=True)
    (matrix_dir / "comparison.csv").write_text(
        corpus_csv(rows, matrix_hash, config.tp_mode), encoding="utf-8"
    )
    (matrix_dir / "comparison.md").write_text(
        corpus_markdown(rows, matrix_hash, config.tp_mode), encoding="utf-8"
    )
    return MatrixResult(matrix_dir=matrix_dir, runs=tuple(runs))


# -- extraction scoring ---------------------------------------------------------


def score_corpus_extractions(
    config: PipelineConfig,
    gateway: LLMGateway,
    paper_ids: Sequence[str] | None = None,
) -> list[tuple[str, dict]]:
    """Extraction quality against gold for every paper that has a gold file."""
    store = CorpusStore(config.corpus_dir)
    ids = list(paper_ids) if paper_ids is not None else store.list_papers()
    rows: list[tuple[str, dict]] = []
    for paper_id in ids:
        if not store.exists(paper_id, "gold"):
            continue
        paper = store.load(paper_id, "paper")
        extraction = extract_spans(paper)
        if extraction.mode == "none":
            logger.warning("paper %s has gold but no extracted spans", paper_id)
            continue
        quality = score_extraction(
            extraction.full_text(), store.load(paper_id, "gold"), gateway
        )
        rows.append(
            (
                paper_id,
                {
                    "cosine": quality.cosine,
                    "precision": quality.precision,
                    "recall": quality.recall,
                    "f1": quality.f1,
                    "fuzzy": quality.fuzzy,
                },
            )
        )
    return rows
