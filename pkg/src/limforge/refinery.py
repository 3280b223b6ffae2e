"""Turn raw spans and reviews into clean, grounded limitation sets.

A model segments span text into distinct limitation statements; every
returned statement is validated sentence-by-sentence against its source
text and dropped when any sentence falls below the groundedness threshold.
Dropped statements are reported, never repaired. Author and reviewer sets
are merged into a single ground-truth set under the same guard.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources

from .corpus import LimitationSet, LimitationStatement, ReviewSet
from .gateway import ChatRequest, LLMGateway
from .itemparse import parse_items, render_items
from .spans import SpanExtraction
from .textproc import split_sentences, token_fuzzy_similarity

log = logging.getLogger(__name__)

GROUNDEDNESS_THRESHOLD = 0.85

_REVIEWER_LABEL_RE = re.compile(r"^Reviewer \d+:$")


@dataclass(frozen=True)
class GroundednessResult:
    """Whether every sentence of a statement traces back to the source."""

    grounded: bool
    score: float


@dataclass(frozen=True)
class DroppedStatement:
    """A statement rejected during refinement, with the reason."""

    text: str
    heading: str | None
    reason: str
    score: float


@dataclass(frozen=True)
class RefineryOutput:
    """Refined author, reviewer, and merged limitation sets for one paper."""

    author_set: LimitationSet
    reviewer_set: LimitationSet | None
    merged_set: LimitationSet
    dropped: tuple[DroppedStatement, ...]


def load_prompt(name: str) -> str:
    """A prompt template shipped with the package, by file stem."""
    return (
        resources.files("limforge").joinpath("prompts", f"{name}.txt").read_text("utf-8")
    )


def groundedness_check(
    statement: LimitationStatement | str,
    source: str,
    threshold: float = GROUNDEDNESS_THRESHOLD,
) -> GroundednessResult:
    """Match each statement sentence against source sentences by fuzzy similarity.

    Grounded iff every sentence has a source match at or above the
    threshold; the score is the weakest sentence's best match.
    """
    text = statement.text if isinstance(statement, LimitationStatement) else statement
    statement_sentences = split_sentences(text)
    source_sentences = split_sentences(source)
    if not statement_sentences or not source_sentences:
        return GroundednessResult(grounded=False, score=0.0)
    worst = 1.0
    for sentence in statement_sentences:
        best = max(
            token_fuzzy_similarity(sentence, candidate) for candidate in source_sentences
        )
        worst = min(worst, best)
        if worst < threshold:
            # keep scanning is pointless; the statement already fails
            return GroundednessResult(grounded=False, score=worst)
    return GroundednessResult(grounded=True, score=worst)


def _refine_reply(
    reply: str,
    source: str,
    provenance: str,
    threshold: float,
) -> tuple[list[LimitationStatement], list[DroppedStatement]]:
    kept: list[LimitationStatement] = []
    dropped: list[DroppedStatement] = []
    for heading, text in parse_items(reply):
        result = groundedness_check(text, source, threshold)
        if result.grounded:
            kept.append(
                LimitationStatement(text=text, heading=heading, provenance=provenance)
            )
        else:
            dropped.append(
                DroppedStatement(
                    text=text, heading=heading, reason="ungrounded", score=result.score
                )
            )
            log.warning("dropped ungrounded %s statement (score %.3f)", provenance, result.score)
    return kept, dropped


def refine_author_spans(
    extraction: SpanExtraction,
    gateway: LLMGateway,
    model_name: str,
    threshold: float = GROUNDEDNESS_THRESHOLD,
) -> tuple[LimitationSet, list[DroppedStatement]]:
    """Segment extracted span text into grounded author limitation statements."""
    source = extraction.full_text()
    if not source.strip():
        raise ValueError("extraction contains no span text")
    prompt = load_prompt("refine_author").format(span_text=source)
    reply = gateway.chat(
        ChatRequest(model_name=model_name, messages=(("user", prompt),))
    )
    kept, dropped = _refine_reply(reply, source, "author", threshold)
    if not kept:
        log.warning("all refined statements dropped for paper %s", extraction.paper_id)
    return (
        LimitationSet(
            paper_id=extraction.paper_id, provenance="author", statements=tuple(kept)
        ),
        dropped,
    )


def consolidate_reviews(reviews: ReviewSet) -> str:
    """One labeled text block per review, order preserved."""
    blocks = [
        f"Reviewer {i}:\n{text}" for i, text in enumerate(reviews.reviews, start=1)
    ]
    return "\n\n".join(blocks)


def segment_review_limitations(
    consolidated: str,
    paper_id: str,
    gateway: LLMGateway,
    model_name: str,
    threshold: float = GROUNDEDNESS_THRESHOLD,
) -> tuple[LimitationSet, list[DroppedStatement]]:
    """Extract grounded reviewer limitation statements from consolidated reviews."""
    if not consolidated.strip():
        raise ValueError("consolidated review text is empty")
    prompt = load_prompt("segment_review").format(review_text=consolidated)
    reply = gateway.chat(
        ChatRequest(model_name=model_name, messages=(("user", prompt),))
    )
    # the label lines added by consolidate_reviews are not reviewer content
    grounding_source = "\n".join(
        line
        for line in consolidated.splitlines()
        if not _REVIEWER_LABEL_RE.fullmatch(line.strip())
    )
    kept, dropped = _refine_reply(reply, grounding_source, "reviewer", threshold)
    return (
        LimitationSet(paper_id=paper_id, provenance="reviewer", statements=tuple(kept)),
        dropped,
    )


def _restamp(limset: LimitationSet, provenance: str) -> LimitationSet:
    return LimitationSet(
        paper_id=limset.paper_id,
        provenance=provenance,
        statements=tuple(
            LimitationStatement(
                text=s.text,
                heading=s.heading,
                provenance=provenance,
                source_offsets=s.source_offsets,
            )
            for s in limset.statements
        ),
    )


def merge_ground_truth(
    author_set: LimitationSet,
    reviewer_set: LimitationSet | None,
    gateway: LLMGateway,
    model_name: str,
    threshold: float = GROUNDEDNESS_THRESHOLD,
) -> tuple[LimitationSet, list[DroppedStatement]]:
    """Merge author and reviewer sets, collapsing only duplicates.

    Without a reviewer set the author set passes through unchanged (texts
    and headings identical, provenance restamped). Merged output is
    grounded against the union of both input sets and capped at
    |authors| + |reviewers| statements.
    """
    if reviewer_set is None or not reviewer_set.statements:
        return _restamp(author_set, "merged"), []
    prompt = load_prompt("merge_sets").format(
        author_items=render_items(
            [(s.heading, s.text) for s in author_set.statements]
        ),
        reviewer_items=render_items(
            [(s.heading, s.text) for s in reviewer_set.statements]
        ),
    )
    reply = gateway.chat(
        ChatRequest(model_name=model_name, messages=(("user", prompt),))
    )
    source = "\n".join(
        s.text for s in (*author_set.statements, *reviewer_set.statements)
    )
    kept, dropped = _refine_reply(reply, source, "merged", threshold)
    cap = len(author_set.statements) + len(reviewer_set.statements)
    if len(kept) > cap:
        for statement in kept[cap:]:
            dropped.append(
                DroppedStatement(
                    text=statement.text,
                    heading=statement.heading,
                    reason="cardinality_overflow",
                    score=1.0,
                )
            )
        kept = kept[:cap]
    return (
        LimitationSet(
            paper_id=author_set.paper_id, provenance="merged", statements=tuple(kept)
        ),
        dropped,
    )


def refine_paper(
    extraction: SpanExtraction,
    reviews: ReviewSet | None,
    gateway: LLMGateway,
    extractor_model: str,
    merge_model: str | None = None,
    threshold: float = GROUNDEDNESS_THRESHOLD,
) -> RefineryOutput:
    """Full refinement for one paper: author set, reviewer set, merged set."""
    author_set, dropped = refine_author_spans(
        extraction, gateway, extractor_model, threshold
    )
    reviewer_set: LimitationSet | None = None
    if reviews is not None and reviews.reviews:
        consolidated = consolidate_reviews(reviews)
        reviewer_set, dropped_reviewer = segment_review_limitations(
            consolidated, extraction.paper_id, gateway, extractor_model, threshold
        )
        dropped = dropped + dropped_reviewer
    merged_set, dropped_merge = merge_ground_truth(
        author_set, reviewer_set, gateway, merge_model or extractor_model, threshold
    )
    return RefineryOutput(
        author_set=author_set,
        reviewer_set=reviewer_set,
        merged_set=merged_set,
        dropped=tuple(dropped + dropped_merge),
    )
