"""Hybrid lexical plus dense retrieval over citation-neighborhood chunks.

The index pairs BM25 term scoring with exact embedding cosine, fuses the two
with equal weight after min-max normalization over a shared candidate pool,
and filters retrieved chunks through an LLM relevance judge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import random
import re
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

from .corpus import EmptyDocumentError, PaperRecord, Section, canonical_json
from .gateway import ChatRequest, EmbeddingVector, LLMGateway, cosine
from .refinery import load_prompt
from .textproc import split_sentences, token_estimate, tokenize

logger = logging.getLogger(__name__)

INDEX_VARIANTS = (
    "none",
    "random_k",
    "cited_in",
    "cited_by",
    "cited_in_by",
    "cited_in_by_semantic",
)

BM25_K1 = 1.2
BM25_B = 0.75
DEFAULT_CHUNK_TOKENS = 512
DEFAULT_RETRIEVE_K = 20
DEFAULT_FUSION_WEIGHT = 0.5
RERANK_THRESHOLD = 8


class RagError(Exception):
    pass


class DegenerateEmbeddingError(RagError):
    """Seed vectors cancelled out; the mean has no direction."""


class EmptyIndexError(RagError):
    pass


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    source_paper_id: str
    section_heading: str
    text: str
    token_estimate: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("chunk text must be non-empty")


@dataclass(frozen=True)
class RetrievedChunk:
    chunk_id: str
    source_paper_id: str
    section_heading: str
    text: str
    lexical_score: float
    dense_score: float
    fused_score: float
    rank: int


@dataclass(frozen=True)
class RerankDecision:
    chunk_id: str
    relevance: int
    kept: bool

    def __post_init__(self) -> None:
        if not 1 <= self.relevance <= 10:
            raise ValueError("relevance must be between 1 and 10")


@dataclass(frozen=True)
class HybridIndex:
    """Immutable retrieval state: one BM25 side and one embedding per chunk."""

    variant: str
    chunks: tuple[Chunk, ...]
    doc_tokens: tuple[tuple[str, ...], ...]
    doc_freq: Mapping[str, int]
    avg_doc_len: float
    embeddings: tuple[EmbeddingVector, ...]

    def __post_init__(self) -> None:
        if self.variant not in INDEX_VARIANTS:
            raise ValueError(f"unknown index variant: {self.variant!r}")
        if not (len(self.chunks) == len(self.doc_tokens) == len(self.embeddings)):
            raise ValueError("lexical and dense states must cover the same chunks")
        object.__setattr__(self, "doc_freq", MappingProxyType(dict(self.doc_freq)))

    def __len__(self) -> int:
        return len(self.chunks)

    def lexical_scores(self, query_tokens: Sequence[str]) -> list[float]:
        """BM25 with k1=1.2, b=0.75; idf = ln(1 + (N-df+0.5)/(df+0.5))."""
        n = len(self.chunks)
        scores = [0.0] * n
        if n == 0 or self.avg_doc_len == 0:
            return scores
        counts = [Counter(toks) for toks in self.doc_tokens]
        for term in sorted(set(query_tokens)):
            df = self.doc_freq.get(term, 0)
            if df == 0:
                continue
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            for i, toks in enumerate(self.doc_tokens):
                tf = counts[i][term]
                if tf == 0:
                    continue
                norm = BM25_K1 * (1.0 - BM25_B + BM25_B * len(toks) / self.avg_doc_len)
                scores[i] += idf * tf * (BM25_K1 + 1.0) / (tf + norm)
        return scores

    def dense_scores(self, query_embedding: EmbeddingVector) -> list[float]:
        return [cosine(query_embedding, emb) for emb in self.embeddings]


def rank_sections(
    paper: PaperRecord,
    reference_embedding: EmbeddingVector,
    gateway: LLMGateway,
) -> list[tuple[Section, float]]:
    """Order sections by cosine to the reference; ties keep document order."""
    if not paper.sections:
        raise EmptyDocumentError(f"paper {paper.paper_id} has no sections")
    embeddings = gateway.embed([section.body for section in paper.sections])
    scored = [
        (section, cosine(reference_embedding, emb))
        for section, emb in zip(paper.sections, embeddings)
    ]
    return sorted(scored, key=lambda pair: (-pair[1], pair[0].index))


def top_sections(ranked: Sequence[tuple[Section, float]], k: int = 3) -> list[Section]:
    return [section for section, _ in ranked[:k]]


def build_reference_embedding(
    seed_limitation_texts: Sequence[str], gateway: LLMGateway
) -> EmbeddingVector:
    """Mean of the seed embeddings, re-normalized to unit length."""
    if not seed_limitation_texts:
        raise RagError("reference embedding needs at least one seed text")
    embeddings = gateway.embed(list(seed_limitation_texts))
    dim = embeddings[0].dim
    mean = [0.0] * dim
    for emb in embeddings:
        for i, value in enumerate(emb.values):
            mean[i] += value
    mean = [value / len(embeddings) for value in mean]
    norm = math.sqrt(sum(value * value for value in mean))
    if norm < 1e-12:
        raise DegenerateEmbeddingError("seed embeddings average to the zero vector")
    return EmbeddingVector(
        values=tuple(value / norm for value in mean),
        model_name=embeddings[0].model_name,
    )


def _split_section(body: str, max_tokens: int) -> list[str]:
    sentences = split_sentences(body)
    pieces: list[str] = []
    current: list[str] = []
    current_tokens = 0
    for sentence in sentences:
        tokens = token_estimate(sentence)
        if current and current_tokens + tokens > max_tokens:
            pieces.append(" ".join(current))
            current, current_tokens = [sentence], tokens
        else:
            current.append(sentence)
            current_tokens += tokens
    if current:
        pieces.append(" ".join(current))
    return pieces


def chunk_by_section(
    papers: Sequence[PaperRecord], max_tokens: int = DEFAULT_CHUNK_TOKENS
) -> list[Chunk]:
    """One chunk per section; oversize sections split at sentence boundaries.

    A single sentence longer than max_tokens stays whole: sentence integrity
    outranks the size bound.
    """
    chunks: list[Chunk] = []
    for paper in papers:
        for section in paper.sections:
            if token_estimate(section.body) <= max_tokens:
                pieces = [section.body]
            else:
                pieces = _split_section(section.body, max_tokens)
            for part, piece in enumerate(pieces):
                chunks.append(
                    Chunk(
                        chunk_id=f"{paper.paper_id}::{section.index:04d}::{part:02d}",
                        source_paper_id=paper.paper_id,
                        section_heading=section.heading,
                        text=piece,
                        token_estimate=token_estimate(piece),
                    )
                )
    return chunks


def build_index(
    chunks: Sequence[Chunk], variant: str, gateway: LLMGateway
) -> HybridIndex:
    if not chunks:
        raise EmptyIndexError("cannot build an index from zero chunks")
    doc_tokens = tuple(tuple(tokenize(chunk.text)) for chunk in chunks)
    doc_freq: Counter[str] = Counter()
    for toks in doc_tokens:
        doc_freq.update(set(toks))
    avg_doc_len = sum(len(toks) for toks in doc_tokens) / len(doc_tokens)
    embeddings = tuple(gateway.embed([chunk.text for chunk in chunks]))
    return HybridIndex(
        variant=variant,
        chunks=tuple(chunks),
        doc_tokens=doc_tokens,
        doc_freq=dict(doc_freq),
        avg_doc_len=avg_doc_len,
        embeddings=embeddings,
    )


def _top_pool(scores: Sequence[float], chunk_ids: Sequence[str], size: int) -> set[int]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], chunk_ids[i]))
    return set(order[:size])


def _minmax(values: dict[int, float]) -> dict[int, float]:
    lo = min(values.values())
    hi = max(values.values())
    span = hi - lo
    if span == 0:
        # Degenerate pool: every candidate identical, contribute nothing.
        return {i: 0.0 for i in values}
    return {i: (v - lo) / span for i, v in values.items()}


def fuse_pool(
    lexical: Mapping[object, float],
    dense: Mapping[object, float],
    lexical_weight: float = DEFAULT_FUSION_WEIGHT,
    dense_weight: float = DEFAULT_FUSION_WEIGHT,
) -> dict:
    """Weighted sum of minmax(lexical) and minmax(dense), equal weights by default."""
    if set(lexical) != set(dense):
        raise ValueError("both retrievers must score the same candidate pool")
    if not lexical:
        return {}
    norm_lex = _minmax(dict(lexical))
    norm_dense = _minmax(dict(dense))
    return {
        i: lexical_weight * norm_lex[i] + dense_weight * norm_dense[i] for i in lexical
    }


def retrieve(
    query: str,
    index: HybridIndex,
    gateway: LLMGateway,
    k: int = DEFAULT_RETRIEVE_K,
    lexical_weight: float = DEFAULT_FUSION_WEIGHT,
    dense_weight: float = DEFAULT_FUSION_WEIGHT,
) -> list[RetrievedChunk]:
    """Top-k by fused score over the union of each retriever's top-(4k) pool."""
    if len(index) == 0 or k <= 0:
        return []
    chunk_ids = [chunk.chunk_id for chunk in index.chunks]
    lexical = index.lexical_scores(tokenize(query))
    dense = index.dense_scores(gateway.embed_one(query))
    pool = _top_pool(lexical, chunk_ids, 4 * k) | _top_pool(dense, chunk_ids, 4 * k)
    fused = fuse_pool(
        {i: lexical[i] for i in pool},
        {i: dense[i] for i in pool},
        lexical_weight,
        dense_weight,
    )
    order = sorted(pool, key=lambda i: (-fused[i], chunk_ids[i]))[:k]
    results = []
    for rank, i in enumerate(order, start=1):
        chunk = index.chunks[i]
        results.append(
            RetrievedChunk(
                chunk_id=chunk.chunk_id,
                source_paper_id=chunk.source_paper_id,
                section_heading=chunk.section_heading,
                text=chunk.text,
                lexical_score=lexical[i],
                dense_score=dense[i],
                fused_score=fused[i],
                rank=rank,
            )
        )
    return results


_RELEVANCE_RE = re.compile(r"^\s*(\d+)\b")

_RERANK_NUDGE = "Reply with a single integer between 1 and 10 and nothing else."


def _parse_relevance(reply: str) -> int | None:
    match = _RELEVANCE_RE.match(reply)
    if not match:
        return None
    value = int(match.group(1))
    return value if 1 <= value <= 10 else None


def rerank(
    retrieved: Sequence[RetrievedChunk],
    paper_context: str,
    gateway: LLMGateway,
    model_name: str,
    threshold: int = RERANK_THRESHOLD,
) -> tuple[list[RetrievedChunk], list[RerankDecision]]:
    """Judge each chunk 1..10 against the paper; keep those at or above threshold.

    Kept chunks come back ordered by relevance descending, then fused score
    descending. An unparseable judge reply is retried once with a nudge; if it
    still fails to parse the chunk is dropped and logged, with no decision row.
    """
    if not retrieved:
        raise RagError("rerank requires at least one retrieved chunk")
    template = load_prompt("rerank_chunk")
    decisions: list[RerankDecision] = []
    scored: list[tuple[RetrievedChunk, int]] = []
    for chunk in retrieved:
        prompt = template.format(paper_context=paper_context, chunk_text=chunk.text)
        messages = [("user", prompt)]
        relevance = _parse_relevance(
            gateway.chat(ChatRequest(model_name=model_name, messages=tuple(messages)))
        )
        if relevance is None:
            messages.append(("user", _RERANK_NUDGE))
            relevance = _parse_relevance(
                gateway.chat(ChatRequest(model_name=model_name, messages=tuple(messages)))
            )
        if relevance is None:
            logger.warning("unparseable relevance reply for chunk %s", chunk.chunk_id)
            continue
        decisions.append(
            RerankDecision(
                chunk_id=chunk.chunk_id, relevance=relevance, kept=relevance >= threshold
            )
        )
        scored.append((chunk, relevance))
    kept = [
        chunk
        for chunk, relevance in sorted(
            scored, key=lambda pair: (-pair[1], -pair[0].fused_score)
        )
        if relevance >= threshold
    ]
    return kept, decisions


def sample_random_corpus(
    corpus: Sequence[PaperRecord], n: int = 100, seed: int = 0
) -> list[PaperRecord]:
    if len(corpus) < n:
        raise RagError(f"corpus has {len(corpus)} papers, cannot sample {n}")
    return random.Random(seed).sample(list(corpus), n)


def _config_hash(variant: str, embed_model: str) -> str:
    payload = {"variant": variant, "embed_model": embed_model, "k1": BM25_K1, "b": BM25_B}
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()[:16]


def save_index(index: HybridIndex, path: str | Path) -> None:
    """Persist as a directory: chunk table, term stats, embedding matrix, manifest."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    chunk_rows = [
        {
            "chunk_id": c.chunk_id,
            "source_paper_id": c.source_paper_id,
            "section_heading": c.section_heading,
            "text": c.text,
            "token_estimate": c.token_estimate,
        }
        for c in index.chunks
    ]
    (root / "chunks.json").write_text(canonical_json(chunk_rows), encoding="utf-8")
    stats = {"doc_freq": dict(index.doc_freq), "avg_doc_len": index.avg_doc_len}
    (root / "term_stats.json").write_text(canonical_json(stats), encoding="utf-8")
    rows = len(index.embeddings)
    dim = index.embeddings[0].dim if rows else 0
    model_name = index.embeddings[0].model_name if rows else ""
    with open(root / "embeddings.bin", "wb") as handle:
        handle.write(struct.pack("<II", rows, dim))
        for emb in index.embeddings:
            handle.write(struct.pack(f"<{dim}d", *emb.values))
    manifest = {
        "variant": index.variant,
        "chunk_count": rows,
        "embed_model": model_name,
        "embed_dim": dim,
        "config_hash": _config_hash(index.variant, model_name),
    }
    (root / "manifest.json").write_text(canonical_json(manifest), encoding="utf-8")


def load_index(path: str | Path) -> HybridIndex:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    chunk_rows = json.loads((root / "chunks.json").read_text(encoding="utf-8"))
    stats = json.loads((root / "term_stats.json").read_text(encoding="utf-8"))
    chunks = tuple(Chunk(**row) for row in chunk_rows)
    with open(root / "embeddings.bin", "rb") as handle:
        rows, dim = struct.unpack("<II", handle.read(8))
        embeddings = tuple(
            EmbeddingVector(
                values=struct.unpack(f"<{dim}d", handle.read(8 * dim)),
                model_name=manifest["embed_model"],
            )
            for _ in range(rows)
        )
    return HybridIndex(
        variant=manifest["variant"],
        chunks=chunks,
        doc_tokens=tuple(tuple(tokenize(c.text)) for c in chunks),
        doc_freq={term: int(df) for term, df in stats["doc_freq"].items()},
        avg_doc_len=float(stats["avg_doc_len"]),
        embeddings=embeddings,
    )
