"""Limitation-set generation: chunked vanilla mode and RAG-augmented mode."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

from .corpus import (
    LimitationSet,
    LimitationStatement,
    Section,
    canonical_json,
    limitation_set_from_dict,
    limitation_set_to_dict,
)
from .gateway import ChatRequest, LLMGateway
from .itemparse import parse_items
from .refinery import load_prompt
from .textproc import split_sentences, token_estimate

logger = logging.getLogger(__name__)

GENERATION_MODES = ("vanilla", "rag")
INPUT_SCOPES = ("top3_sections", "all_sections")
DEFAULT_MAX_STATEMENTS = 15
DEFAULT_CONTEXT_BUDGET = 3000
CHUNK_OVERLAP_FRACTION = 0.10


class GenerationError(Exception):
    pass


class GenerationParseError(GenerationError):
    """Model output yielded zero parseable statements; raw text attached."""

    def __init__(self, message: str, raw: str) -> None:
        super().__init__(message)
        self.raw = raw


class SourcedChunk(Protocol):
    """Anything carrying retrievable text with provenance fields."""

    text: str
    source_paper_id: str
    section_heading: str


@dataclass(frozen=True)
class GenerationRun:
    paper_id: str
    mode: str
    input_scope: str
    index_variant: str | None
    prompt_hash: str
    statements: LimitationSet

    def __post_init__(self) -> None:
        if self.mode not in GENERATION_MODES:
            raise ValueError(f"unknown generation mode: {self.mode!r}")
        if self.input_scope not in INPUT_SCOPES:
            raise ValueError(f"unknown input scope: {self.input_scope!r}")
        if self.mode == "rag" and not self.index_variant:
            raise ValueError("rag runs must record their index variant")
        if len(self.statements) < 1:
            raise ValueError("a generation run must hold at least one statement")


def parse_generated(raw: str) -> list[LimitationStatement]:
    """Structure model output into statements; zero items is an error."""
    items = parse_items(raw)
    if not items:
        raise GenerationParseError("no parseable limitation items in reply", raw=raw)
    return [
        LimitationStatement(text=text, heading=heading, provenance="generated")
        for heading, text in items
    ]


def sections_text(sections: Sequence[Section]) -> str:
    return "\n\n".join(f"{s.heading}\n{s.body}" for s in sections)


def _prompt_hash(prompts: Sequence[str]) -> str:
    return hashlib.sha256(canonical_json(list(prompts)).encode("utf-8")).hexdigest()[:16]


def split_for_budget(text: str, budget: int) -> list[str]:
    """Sentence-aligned chunks at most `budget` tokens, 10% trailing overlap.

    A single sentence longer than the budget stays whole.
    """
    if token_estimate(text) <= budget:
        return [text]
    overlap_budget = int(budget * CHUNK_OVERLAP_FRACTION)
    chunks: list[str] = []
    current: list[str] = []
    current_tokens = 0
    for sentence in split_sentences(text):
        tokens = token_estimate(sentence)
        if current and current_tokens + tokens > budget:
            chunks.append(" ".join(current))
            carry: list[str] = []
            carry_tokens = 0
            for prev in reversed(current):
                prev_tokens = token_estimate(prev)
                if carry_tokens + prev_tokens > overlap_budget:
                    break
                carry.insert(0, prev)
                carry_tokens += prev_tokens
            current = carry + [sentence]
            current_tokens = carry_tokens + tokens
        else:
            current.append(sentence)
            current_tokens += tokens
    if current:
        chunks.append(" ".join(current))
    return chunks


def _statements_set(
    paper_id: str, raw: str, max_statements: int
) -> LimitationSet:
    statements = parse_generated(raw)[:max_statements]
    return LimitationSet(
        paper_id=paper_id, provenance="generated", statements=tuple(statements)
    )


def generate_vanilla(
    paper_id: str,
    sections: Sequence[Section],
    gateway: LLMGateway,
    model_name: str,
    context_budget: int = DEFAULT_CONTEXT_BUDGET,
    max_statements: int = DEFAULT_MAX_STATEMENTS,
    input_scope: str = "top3_sections",
) -> GenerationRun:
    """One call when the input fits the budget; otherwise per-chunk calls
    followed by one aggregation call that merges the chunk outputs."""
    if not sections:
        raise GenerationError("generation requires at least one section")
    template = load_prompt("generate_vanilla")
    text = sections_text(sections)
    chunks = split_for_budget(text, context_budget)
    prompts: list[str] = []

    def ask(prompt: str) -> str:
        prompts.append(prompt)
        return gateway.chat(
            ChatRequest(model_name=model_name, messages=(("user", prompt),))
        )

    if len(chunks) == 1:
        final_reply = ask(
            template.format(paper_text=chunks[0], max_statements=max_statements)
        )
    else:
        chunk_replies = [
            ask(template.format(paper_text=chunk, max_statements=max_statements))
            for chunk in chunks
        ]
        chunk_outputs = "\n\n".join(
            f"Chunk {i} limitations:\n{reply}"
            for i, reply in enumerate(chunk_replies, start=1)
        )
        final_reply = ask(
            load_prompt("aggregate_chunks").format(
                chunk_outputs=chunk_outputs, max_statements=max_statements
            )
        )
    return GenerationRun(
        paper_id=paper_id,
        mode="vanilla",
        input_scope=input_scope,
        index_variant=None,
        prompt_hash=_prompt_hash(prompts),
        statements=_statements_set(paper_id, final_reply, max_statements),
    )


def generate_rag(
    paper_id: str,
    sections: Sequence[Section],
    kept_chunks: Sequence[SourcedChunk],
    gateway: LLMGateway,
    model_name: str,
    index_variant: str,
    max_statements: int = DEFAULT_MAX_STATEMENTS,
    input_scope: str = "top3_sections",
) -> GenerationRun:
    """Single prompt: selected sections plus kept chunks with attributions.

    With no kept chunks the vanilla prompt is used instead, but the run still
    records rag mode and its index variant.
    """
    if not sections:
        raise GenerationError("generation requires at least one section")
    text = sections_text(sections)
    if kept_chunks:
        context_text = "\n\n".join(
            f"[From {c.source_paper_id}, section {c.section_heading}]\n{c.text}"
            for c in kept_chunks
        )
        prompt = load_prompt("generate_rag").format(
            paper_text=text, context_text=context_text, max_statements=max_statements
        )
    else:
        logger.info(
            "paper %s: no chunks survived reranking, falling back to vanilla prompt",
            paper_id,
        )
        prompt = load_prompt("generate_vanilla").format(
            paper_text=text, max_statements=max_statements
        )
    reply = gateway.chat(
        ChatRequest(model_name=model_name, messages=(("user", prompt),))
    )
    return GenerationRun(
        paper_id=paper_id,
        mode="rag",
        input_scope=input_scope,
        index_variant=index_variant,
        prompt_hash=_prompt_hash([prompt]),
        statements=_statements_set(paper_id, reply, max_statements),
    )


def run_to_dict(run: GenerationRun) -> dict:
    return {
        "paper_id": run.paper_id,
        "mode": run.mode,
        "input_scope": run.input_scope,
        "index_variant": run.index_variant,
        "prompt_hash": run.prompt_hash,
        "statements": limitation_set_to_dict(run.statements),
    }


def run_from_dict(data: dict) -> GenerationRun:
    return GenerationRun(
        paper_id=data["paper_id"],
        mode=data["mode"],
        input_scope=data["input_scope"],
        index_variant=data["index_variant"],
        prompt_hash=data["prompt_hash"],
        statements=limitation_set_from_dict(data["statements"]),
    )
