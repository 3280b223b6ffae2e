"""Locate explicit and implicit limitation spans and score extraction quality.

Explicit mode returns a dedicated limitations section. Implicit mode scans
eligible sections for keyword-bearing sentences and extends each span until
a stop cue or the end of the section. Every span's text is byte-identical
to its source slice, so grounding holds by construction.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

from .corpus import GoldAnnotation, PaperRecord
from .gateway import LLMGateway, cosine
from .textproc import normalize_heading, sentence_spans, token_fuzzy_similarity, tokenize

# Normalized headings recognized as a dedicated limitations section.
EXPLICIT_HEADINGS = frozenset(
    {"limitation", "limitations", "limitations and future work", "study limitations"}
)

# Sections where limitations are rarely discussed; never scanned in implicit mode.
EXCLUDED_HEADINGS = frozenset({"abstract", "introduction", "related work"})

# Keyword stems that open an implicit span (matched with optional plural "s").
DEFAULT_KEYWORDS = ("limitation", "shortcoming")

# Terms that close an implicit span, as section headings or sentence-initial cues.
STOP_MARKERS = (
    "acknowledgements",
    "grant",
    "future work",
    "discussion",
    "conclusion",
    "appendix",
)


class ExtractionError(Exception):
    """Raised when extraction scoring receives unusable input."""


@dataclass(frozen=True)
class Span:
    """One extracted text range; text equals the source slice exactly."""

    section_index: int
    char_start: int
    char_end: int
    text: str


@dataclass(frozen=True)
class SpanExtraction:
    """All limitation spans found in one paper, with the strategy used."""

    paper_id: str
    mode: str
    spans: tuple[Span, ...]

    def __post_init__(self) -> None:
        if self.mode not in ("explicit", "implicit", "none"):
            raise ValueError(f"unknown extraction mode: {self.mode}")

    def full_text(self) -> str:
        return "\n".join(span.text for span in self.spans)


@dataclass(frozen=True)
class ExtractionQuality:
    """Extraction-vs-gold scores, each on a 0-100 scale."""

    cosine: float
    precision: float
    recall: float
    f1: float
    fuzzy: float


def _keyword_re(keywords: tuple[str, ...]) -> re.Pattern[str]:
    alternatives = "|".join(rf"{re.escape(stem)}s?" for stem in keywords)
    return re.compile(rf"\b(?:{alternatives})\b", re.IGNORECASE)


def _stop_cue_re(markers: tuple[str, ...]) -> re.Pattern[str]:
    alternatives = "|".join(re.escape(term) for term in markers)
    return re.compile(rf"^\W*(?:{alternatives})\b", re.IGNORECASE)


def extract_explicit(
    paper: PaperRecord, headings: frozenset[str] = EXPLICIT_HEADINGS
) -> Span | None:
    """The body of the first dedicated limitations section, if any."""
    for section in paper.sections:
        if normalize_heading(section.heading) in headings:
            return Span(
                section_index=section.index,
                char_start=0,
                char_end=len(section.body),
                text=section.body,
            )
    return None


def extract_implicit(
    paper: PaperRecord,
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS,
    excluded: frozenset[str] = EXCLUDED_HEADINGS,
    stop_markers: tuple[str, ...] = STOP_MARKERS,
) -> list[Span]:
    """Keyword-anchored spans from eligible sections.

    A span starts at the sentence containing a keyword and extends through
    following sentences until one opens with a stop cue or the section ends.
    Keyword hits inside an already-emitted span never start a second one.
    """
    keyword_re = _keyword_re(keywords)
    stop_re = _stop_cue_re(stop_markers)
    spans: list[Span] = []
    for section in paper.sections:
        if normalize_heading(section.heading) in excluded:
            continue
        sentences = sentence_spans(section.body)
        i = 0
        while i < len(sentences):
            a, b = sentences[i]
            if not keyword_re.search(section.body[a:b]):
                i += 1
                continue
            end_index = i
            for j in range(i + 1, len(sentences)):
                sa, sb = sentences[j]
                if stop_re.match(section.body[sa:sb]):
                    break
                end_index = j
            char_start = sentences[i][0]
            char_end = sentences[end_index][1]
            spans.append(
                Span(
                    section_index=section.index,
                    char_start=char_start,
                    char_end=char_end,
                    text=section.body[char_start:char_end],
                )
            )
            i = end_index + 1
    return spans


def extract_spans(
    paper: PaperRecord,
    headings: frozenset[str] = EXPLICIT_HEADINGS,
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS,
    excluded: frozenset[str] = EXCLUDED_HEADINGS,
    stop_markers: tuple[str, ...] = STOP_MARKERS,
) -> SpanExtraction:
    """Explicit section when present, keyword spans otherwise, none when neither."""
    explicit = extract_explicit(paper, headings)
    if explicit is not None:
        return SpanExtraction(paper_id=paper.paper_id, mode="explicit", spans=(explicit,))
    implicit = extract_implicit(paper, keywords, excluded, stop_markers)
    if implicit:
        return SpanExtraction(paper_id=paper.paper_id, mode="implicit", spans=tuple(implicit))
    return SpanExtraction(paper_id=paper.paper_id, mode="none", spans=())


def score_extraction(
    extracted_text: str, gold: GoldAnnotation | str, gateway: LLMGateway
) -> ExtractionQuality:
    """Token-overlap, fuzzy, and embedding-cosine scores against gold text.

    Precision and recall compare token bags (multisets with multiplicities);
    all scores are scaled to 0-100.
    """
    gold_text = gold.gold_text if isinstance(gold, GoldAnnotation) else gold
    if not extracted_text.strip():
        raise ExtractionError("extracted text is empty")
    if not gold_text.strip():
        raise ExtractionError("gold text is empty")
    extracted_bag = Counter(tokenize(extracted_text))
    gold_bag = Counter(tokenize(gold_text))
    overlap = sum((extracted_bag & gold_bag).values())
    precision = 100.0 * overlap / sum(extracted_bag.values()) if extracted_bag else 0.0
    recall = 100.0 * overlap / sum(gold_bag.values()) if gold_bag else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    fuzzy = 100.0 * token_fuzzy_similarity(extracted_text, gold_text)
    vectors = gateway.embed([extracted_text, gold_text])
    cosine_score = 100.0 * cosine(vectors[0], vectors[1])
    return ExtractionQuality(
        cosine=cosine_score, precision=precision, recall=recall, f1=f1, fuzzy=fuzzy
    )


def extraction_to_dict(extraction: SpanExtraction) -> dict:
    return {
        "paper_id": extraction.paper_id,
        "mode": extraction.mode,
        "spans": [
            {
                "section_index": span.section_index,
                "char_start": span.char_start,
                "char_end": span.char_end,
                "text": span.text,
            }
            for span in extraction.spans
        ],
    }


def extraction_from_dict(data: dict) -> SpanExtraction:
    return SpanExtraction(
        paper_id=data["paper_id"],
        mode=data["mode"],
        spans=tuple(
            Span(
                section_index=int(s["section_index"]),
                char_start=int(s["char_start"]),
                char_end=int(s["char_end"]),
                text=s["text"],
            )
            for s in data["spans"]
        ),
    )
