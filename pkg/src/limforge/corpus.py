"""Canonical data types for papers, reviews, and limitation sets.

Covers ingestion from structured-record files, on-disk persistence (one
directory per paper, one human-readable JSON file per entity kind), and
corpus-level statistics. All types are immutable after construction and
safe to share across workers.
"""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .textproc import normalize_whitespace

PROVENANCES = ("author", "reviewer", "merged", "generated")

DOI_RE = re.compile(r"10\.\d{4,9}/[^\s\"<>]+")
_DOI_PREFIX_RE = re.compile(r"^(?:https?://(?:dx\.)?doi\.org/|doi:)\s*", re.IGNORECASE)


class CorpusError(Exception):
    """Base class for corpus failures."""


class IngestError(CorpusError):
    """Input file is malformed; the message names the offending field."""


class EmptyDocumentError(IngestError):
    """A paper record contained no usable sections."""


class EmptyReviewError(IngestError):
    """A review file contained no non-empty review blocks."""


class NotFoundError(CorpusError):
    """Requested entity was never stored."""


class EmptyCorpusError(CorpusError):
    """Statistics requested over a corpus with no papers."""


def normalize_doi(value: str) -> str | None:
    """Canonical DOI (lowercase, prefix stripped) or None if not DOI-shaped."""
    candidate = _DOI_PREFIX_RE.sub("", value.strip())
    match = DOI_RE.search(candidate)
    if match is None:
        return None
    return match.group(0).rstrip(".,;)]}").lower()


@dataclass(frozen=True)
class Section:
    """One body section of a paper, position-stable after ingest."""

    heading: str
    body: str
    index: int


@dataclass(frozen=True)
class RawReference:
    """One bibliography entry; doi is normalized when present."""

    raw_text: str
    doi: str | None = None
    title: str | None = None


@dataclass(frozen=True)
class PaperRecord:
    """A parsed paper: identity, ordered sections, and references."""

    paper_id: str
    title: str
    venue: str
    year: int
    sections: tuple[Section, ...]
    references: tuple[RawReference, ...] = ()

    def __post_init__(self) -> None:
        if not self.paper_id:
            raise ValueError("paper_id must be non-empty")
        if not self.sections:
            raise ValueError("sections must be non-empty")


@dataclass(frozen=True)
class ReviewSet:
    """Ordered peer-review text blocks for one paper."""

    paper_id: str
    reviews: tuple[str, ...]

    def __post_init__(self) -> None:
        if any(not r.strip() for r in self.reviews):
            raise ValueError("review blocks must be non-empty")


@dataclass(frozen=True)
class LimitationStatement:
    """One limitation: one or more sentences, never split below a sentence."""

    text: str
    heading: str | None = None
    provenance: str = "author"
    source_offsets: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("statement text must be non-empty")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance: {self.provenance}")


@dataclass(frozen=True)
class LimitationSet:
    """All limitation statements of one provenance for one paper."""

    paper_id: str
    provenance: str
    statements: tuple[LimitationStatement, ...]

    def __post_init__(self) -> None:
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance: {self.provenance}")
        for statement in self.statements:
            if statement.provenance != self.provenance:
                raise ValueError(
                    f"statement provenance {statement.provenance!r} does not match "
                    f"set provenance {self.provenance!r}"
                )

    def __len__(self) -> int:
        return len(self.statements)

    def __iter__(self) -> Iterator[LimitationStatement]:
        return iter(self.statements)


@dataclass(frozen=True)
class GoldAnnotation:
    """Human-extracted limitation text for one paper, unsegmented."""

    paper_id: str
    gold_text: str

    def __post_init__(self) -> None:
        if not self.gold_text.strip():
            raise ValueError("gold_text must be non-empty")


# -- ingestion -----------------------------------------------------------


def _first_key(data: dict, aliases: tuple[str, ...]) -> object | None:
    for alias in aliases:
        if alias in data and data[alias] is not None:
            return data[alias]
    return None


def ingest_paper_data(data: dict, fallback_id: str = "") -> PaperRecord:
    """Normalize one structured paper record (already parsed from JSON)."""
    if not isinstance(data, dict):
        raise IngestError("paper record is not an object")
    title = _first_key(data, ("title",))
    if not isinstance(title, str) or not title.strip():
        raise IngestError("missing title")
    paper_id = _first_key(data, ("paper_id", "id", "paperId"))
    if not isinstance(paper_id, str) or not paper_id.strip():
        paper_id = fallback_id
    if not paper_id:
        raise IngestError("missing paper_id")
    raw_sections = _first_key(data, ("sections",))
    if not isinstance(raw_sections, list):
        raise IngestError("missing sections")
    sections: list[Section] = []
    for i, raw in enumerate(raw_sections):
        if not isinstance(raw, dict):
            raise IngestError(f"sections[{i}] is not an object")
        heading = _first_key(raw, ("heading", "title", "header")) or ""
        body = _first_key(raw, ("text", "body", "content")) or ""
        if not isinstance(heading, str) or not isinstance(body, str):
            raise IngestError(f"sections[{i}] heading/text must be strings")
        body = normalize_whitespace(body)
        if not body:
            continue
        sections.append(
            Section(heading=normalize_whitespace(heading), body=body, index=len(sections))
        )
    if not sections:
        raise EmptyDocumentError("no sections with non-empty bodies")
    references: list[RawReference] = []
    raw_refs = _first_key(data, ("references",)) or []
    if not isinstance(raw_refs, list):
        raise IngestError("references must be a list")
    for i, raw in enumerate(raw_refs):
        if not isinstance(raw, dict):
            raise IngestError(f"references[{i}] is not an object")
        raw_text = _first_key(raw, ("raw", "raw_text", "text")) or ""
        ref_title = _first_key(raw, ("title",))
        doi_value = _first_key(raw, ("doi",))
        doi = normalize_doi(doi_value) if isinstance(doi_value, str) else None
        if doi is None and isinstance(raw_text, str):
            doi = normalize_doi(raw_text)
        references.append(
            RawReference(
                raw_text=normalize_whitespace(str(raw_text)),
                doi=doi,
                title=normalize_whitespace(ref_title) if isinstance(ref_title, str) else None,
            )
        )
    year = _first_key(data, ("year",))
    venue = _first_key(data, ("venue", "journal"))
    return PaperRecord(
        paper_id=normalize_whitespace(paper_id),
        title=normalize_whitespace(title),
        venue=normalize_whitespace(venue) if isinstance(venue, str) else "",
        year=int(year) if isinstance(year, (int, float)) else 0,
        sections=tuple(sections),
        references=tuple(references),
    )


def ingest_paper(record_file: str | Path) -> PaperRecord:
    """Parse and normalize a structured-paper file into a PaperRecord."""
    path = Path(record_file)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot parse paper record {path.name}: {exc}") from exc
    return ingest_paper_data(data, fallback_id=path.stem)


def ingest_reviews(review_file: str | Path) -> ReviewSet:
    """Parse a review-set file: trims blocks, drops empties, keeps order."""
    path = Path(review_file)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise IngestError(f"cannot parse review file {path.name}: {exc}") from exc
    if isinstance(data, dict):
        paper_id = str(data.get("paper_id") or path.stem)
        raw_reviews = data.get("reviews", [])
    else:
        paper_id = path.stem
        raw_reviews = data
    if not isinstance(raw_reviews, list):
        raise IngestError("reviews must be a list")
    blocks = [normalize_whitespace(str(block)) for block in raw_reviews]
    blocks = [block for block in blocks if block]
    if not blocks:
        raise EmptyReviewError(f"no non-empty reviews in {path.name}")
    return ReviewSet(paper_id=paper_id, reviews=tuple(blocks))


# -- serialization -------------------------------------------------------


def canonical_json(obj: object) -> str:
    """Stable JSON text used for every artifact this package writes."""
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def paper_to_dict(paper: PaperRecord) -> dict:
    return {
        "paper_id": paper.paper_id,
        "title": paper.title,
        "venue": paper.venue,
        "year": paper.year,
        "sections": [
            {"heading": s.heading, "body": s.body, "index": s.index} for s in paper.sections
        ],
        "references": [
            {"raw_text": r.raw_text, "doi": r.doi, "title": r.title}
            for r in paper.references
        ],
    }


def paper_from_dict(data: dict) -> PaperRecord:
    return PaperRecord(
        paper_id=data["paper_id"],
        title=data["title"],
        venue=data["venue"],
        year=data["year"],
        sections=tuple(
            Section(heading=s["heading"], body=s["body"], index=s["index"])
            for s in data["sections"]
        ),
        references=tuple(
            RawReference(raw_text=r["raw_text"], doi=r.get("doi"), title=r.get("title"))
            for r in data["references"]
        ),
    )


def statement_to_dict(statement: LimitationStatement) -> dict:
    return {
        "text": statement.text,
        "heading": statement.heading,
        "provenance": statement.provenance,
        "source_offsets": (
            [list(span) for span in statement.source_offsets]
            if statement.source_offsets is not None
            else None
        ),
    }


def statement_from_dict(data: dict) -> LimitationStatement:
    offsets = data.get("source_offsets")
    return LimitationStatement(
        text=data["text"],
        heading=data.get("heading"),
        provenance=data["provenance"],
        source_offsets=(
            tuple((int(a), int(b)) for a, b in offsets) if offsets is not None else None
        ),
    )


def limitation_set_to_dict(limset: LimitationSet) -> dict:
    return {
        "paper_id": limset.paper_id,
        "provenance": limset.provenance,
        "statements": [statement_to_dict(s) for s in limset.statements],
    }


def limitation_set_from_dict(data: dict) -> LimitationSet:
    return LimitationSet(
        paper_id=data["paper_id"],
        provenance=data["provenance"],
        statements=tuple(statement_from_dict(s) for s in data["statements"]),
    )


# -- persistence ---------------------------------------------------------

_LIMITATION_KINDS = frozenset(PROVENANCES)


class CorpusStore:
    """One directory per paper; one human-readable file per entity kind.

    Kinds: "paper", "reviews", "gold", and one per limitation provenance
    ("author", "reviewer", "merged", "generated"). Writes are serialized
    per paper_id; reads are unrestricted.
    """

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, paper_id: str) -> threading.Lock:
        with self._locks_guard:
            if paper_id not in self._locks:
                self._locks[paper_id] = threading.Lock()
            return self._locks[paper_id]

    def _path(self, paper_id: str, kind: str) -> Path:
        if kind == "gold":
            return self.root / paper_id / "gold.txt"
        return self.root / paper_id / f"{kind}.json"

    def store(self, entity: object) -> None:
        if isinstance(entity, PaperRecord):
            paper_id, kind = entity.paper_id, "paper"
            content = canonical_json(paper_to_dict(entity))
        elif isinstance(entity, ReviewSet):
            paper_id, kind = entity.paper_id, "reviews"
            content = canonical_json({"paper_id": entity.paper_id, "reviews": list(entity.reviews)})
        elif isinstance(entity, LimitationSet):
            paper_id, kind = entity.paper_id, entity.provenance
            content = canonical_json(limitation_set_to_dict(entity))
        elif isinstance(entity, GoldAnnotation):
            paper_id, kind = entity.paper_id, "gold"
            content = entity.gold_text
        else:
            raise TypeError(f"cannot store entity of type {type(entity).__name__}")
        with self._lock_for(paper_id):
            directory = self.root / paper_id
            directory.mkdir(parents=True, exist_ok=True)
            self._path(paper_id, kind).write_text(content, encoding="utf-8")

    def exists(self, paper_id: str, kind: str) -> bool:
        return self._path(paper_id, kind).is_file()

    def load(self, paper_id: str, kind: str):
        path = self._path(paper_id, kind)
        if not path.is_file():
            raise NotFoundError(f"no stored {kind} for paper {paper_id!r}")
        if kind == "gold":
            return GoldAnnotation(paper_id=paper_id, gold_text=path.read_text(encoding="utf-8"))
        data = json.loads(path.read_text(encoding="utf-8"))
        if kind == "paper":
            return paper_from_dict(data)
        if kind == "reviews":
            return ReviewSet(paper_id=data["paper_id"], reviews=tuple(data["reviews"]))
        if kind in _LIMITATION_KINDS:
            return limitation_set_from_dict(data)
        raise ValueError(f"unknown entity kind: {kind}")

    def list_papers(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            child.name for child in self.root.iterdir() if (child / "paper.json").is_file()
        )


def corpus_stats(store: CorpusStore) -> dict:
    """Corpus means over papers possessing each limitation set kind."""
    papers = store.list_papers()
    if not papers:
        raise EmptyCorpusError(f"no papers under {store.root}")
    author_counts: list[int] = []
    reviewer_counts: list[int] = []
    review_block_counts: list[int] = []
    for paper_id in papers:
        if store.exists(paper_id, "author"):
            author_counts.append(len(store.load(paper_id, "author")))
        if store.exists(paper_id, "reviewer"):
            reviewer_counts.append(len(store.load(paper_id, "reviewer")))
        if store.exists(paper_id, "reviews"):
            review_block_counts.append(len(store.load(paper_id, "reviews").reviews))
    def mean(values: list[int]) -> float | None:
        return sum(values) / len(values) if values else None
    return {
        "papers": len(papers),
        "papers_with_author_sets": len(author_counts),
        "papers_with_reviewer_sets": len(reviewer_counts),
        "mean_author_lims": mean(author_counts),
        "mean_reviewer_lims": mean(reviewer_counts),
        "mean_review_blocks": mean(review_block_counts),
    }
