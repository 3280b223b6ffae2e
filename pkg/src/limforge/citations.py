"""Build a paper's citation neighborhood and resolve neighbor full texts.

Three record directions: cited_in (the paper's own reference list),
cited_by (works citing the paper, fetched from a works API), and semantic
(nearest papers by a relevance search). All HTTP traffic goes through a
record/replay client so tests and CI never touch the network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Protocol

import requests

from .corpus import CorpusStore, IngestError, PaperRecord, ingest_paper_data, normalize_doi

log = logging.getLogger(__name__)

OPENALEX_WORKS_URL = "https://api.openalex.org/works"
SEMANTIC_SEARCH_URL = "https://api.semanticscholar.org/graph/v1/paper/search"

DIRECTIONS = ("cited_in", "cited_by", "semantic")
CITED_BY_CAP = 200

_TITLE_PUNCT_RE = re.compile(r"[^\w\s]|_")
_WS_RE = re.compile(r"\s+")


class EnrichmentError(Exception):
    """A neighborhood fetch failed in a way replay or retries cannot hide."""


class ReplayMissError(EnrichmentError):
    """The replay client has no recorded response for a request."""


def normalize_title(title: str) -> str:
    """Title comparison key: lowercase, punctuation out, whitespace collapsed."""
    return _WS_RE.sub(" ", _TITLE_PUNCT_RE.sub(" ", title.lower())).strip()


@dataclass(frozen=True)
class CitationRecord:
    """One neighborhood paper and how it relates to the anchor paper."""

    direction: str
    title: str
    doi: str | None = None
    rank: int | None = None
    fulltext_id: str | None = None

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction: {self.direction}")
        if self.direction == "semantic" and self.rank is None:
            raise ValueError("semantic records require a rank")

    def dedup_key(self) -> str:
        return self.doi if self.doi else normalize_title(self.title)


@dataclass(frozen=True)
class NeighborhoodManifest:
    """All citation records gathered for one paper."""

    paper_id: str
    records: tuple[CitationRecord, ...]
    fetched_at: str

    def by_direction(self, *directions: str) -> tuple[CitationRecord, ...]:
        return tuple(r for r in self.records if r.direction in directions)


# -- HTTP clients ----------------------------------------------------------


class HTTPClient(Protocol):
    def get_json(self, url: str, params: dict) -> dict: ...


def _request_fingerprint(url: str, params: dict) -> str:
    canonical = json.dumps({"url": url, "params": params}, sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:32]


class LiveHTTPClient:
    """Plain GET client with retry on transient failures."""

    def __init__(
        self,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.session = session or requests.Session()
        self._sleep = sleep

    def get_json(self, url: str, params: dict) -> dict:
        last: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                response = self.session.get(url, params=params, timeout=self.timeout)
                if response.status_code == 429 or response.status_code >= 500:
                    raise requests.HTTPError(f"HTTP {response.status_code}")
                if response.status_code >= 400:
                    raise EnrichmentError(f"HTTP {response.status_code} for {url}")
                return response.json()
            except (requests.RequestException, ValueError) as exc:
                last = exc
                if attempt < self.max_attempts:
                    self._sleep(self.backoff_base * 2 ** (attempt - 1))
        raise EnrichmentError(f"request failed after {self.max_attempts} attempts: {last}")


class ReplayHTTPClient:
    """Serves responses from fixture files; never touches the network."""

    def __init__(self, fixture_dir: str | Path) -> None:
        self.fixture_dir = Path(fixture_dir)

    def get_json(self, url: str, params: dict) -> dict:
        key = _request_fingerprint(url, params)
        path = self.fixture_dir / "http" / f"{key}.json"
        if not path.is_file():
            raise ReplayMissError(f"no recorded response for {url} {params}")
        return json.loads(path.read_text(encoding="utf-8"))


class RecordingHTTPClient:
    """Wraps a client and captures every response as a replay fixture."""

    def __init__(self, inner: HTTPClient, fixture_dir: str | Path) -> None:
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)

    def get_json(self, url: str, params: dict) -> dict:
        data = self.inner.get_json(url, params)
        directory = self.fixture_dir / "http"
        directory.mkdir(parents=True, exist_ok=True)
        key = _request_fingerprint(url, params)
        (directory / f"{key}.json").write_text(
            json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        (directory / f"{key}.request.json").write_text(
            json.dumps({"url": url, "params": params}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        return data


# -- operations ------------------------------------------------------------


def parse_references(paper: PaperRecord) -> list[CitationRecord]:
    """Reference-list records, deduplicated by DOI when present, else title."""
    records: list[CitationRecord] = []
    seen: set[str] = set()
    for ref in paper.references:
        doi = ref.doi or normalize_doi(ref.raw_text)
        title = ref.title or ""
        if not doi and not title.strip():
            log.info("skipping unparseable reference: %.60s", ref.raw_text)
            continue
        record = CitationRecord(direction="cited_in", title=title, doi=doi)
        key = record.dedup_key()
        if key in seen:
            continue
        seen.add(key)
        records.append(record)
    return records


def fetch_cited_by(
    paper: PaperRecord,
    client: HTTPClient,
    cap: int = CITED_BY_CAP,
    page_size: int = 25,
) -> list[CitationRecord]:
    """Works citing the paper, paginated by cursor, capped at ``cap`` records."""
    ident = normalize_doi(paper.paper_id) or paper.paper_id
    records: list[CitationRecord] = []
    cursor = "*"
    while cursor and len(records) < cap:
        data = client.get_json(
            OPENALEX_WORKS_URL,
            {"filter": f"cites:{ident}", "per-page": page_size, "cursor": cursor},
        )
        for row in data.get("results", []):
            title = row.get("title") or row.get("display_name") or ""
            doi_value = row.get("doi")
            doi = normalize_doi(doi_value) if isinstance(doi_value, str) else None
            if not title and not doi:
                continue
            records.append(CitationRecord(direction="cited_by", title=title, doi=doi))
            if len(records) >= cap:
                break
        cursor = (data.get("meta") or {}).get("next_cursor")
    return records


def fetch_semantic_neighbors(
    paper: PaperRecord, client: HTTPClient, k: int = 5
) -> list[CitationRecord]:
    """The k most relevant papers for the title query, ranked 1..k."""
    if k <= 0:
        return []
    if not paper.title.strip():
        raise EnrichmentError("paper title is empty; cannot run a relevance search")
    data = client.get_json(
        SEMANTIC_SEARCH_URL,
        {"query": paper.title, "limit": k, "fields": "title,externalIds"},
    )
    records: list[CitationRecord] = []
    for rank, row in enumerate(data.get("data", [])[:k], start=1):
        title = row.get("title") or ""
        external = row.get("externalIds") or {}
        doi_value = external.get("DOI")
        doi = normalize_doi(doi_value) if isinstance(doi_value, str) else None
        records.append(
            CitationRecord(direction="semantic", title=title, doi=doi, rank=rank)
        )
    return records


def build_manifest(
    paper: PaperRecord,
    client: HTTPClient,
    directions: tuple[str, ...] = DIRECTIONS,
    semantic_k: int = 5,
    cited_by_cap: int = CITED_BY_CAP,
    now: Callable[[], str] | str = "",
) -> NeighborhoodManifest:
    """Fetch the requested directions and assemble a deduplicated manifest.

    A paper appearing in several directions keeps its earliest direction in
    the order cited_in, cited_by, semantic.
    """
    gathered: list[CitationRecord] = []
    if "cited_in" in directions:
        gathered.extend(parse_references(paper))
    if "cited_by" in directions:
        gathered.extend(fetch_cited_by(paper, client, cap=cited_by_cap))
    if "semantic" in directions:
        gathered.extend(fetch_semantic_neighbors(paper, client, k=semantic_k))
    seen: set[str] = set()
    records: list[CitationRecord] = []
    for record in gathered:
        key = record.dedup_key()
        if key in seen:
            log.info("dropping duplicate %s record %s", record.direction, key)
            continue
        seen.add(key)
        records.append(record)
    fetched_at = now() if callable(now) else now
    return NeighborhoodManifest(
        paper_id=paper.paper_id, records=tuple(records), fetched_at=fetched_at
    )


# -- full-text resolution ----------------------------------------------------


def load_metadata_snapshot(path: str | Path) -> list[dict]:
    """Rows of a metadata snapshot file (JSON array or JSON lines)."""
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return []
    if text.startswith("["):
        return json.loads(text)
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def resolve_fulltext(
    records: list[CitationRecord],
    metadata_rows: list[dict],
    fetcher: Callable[[dict], dict],
    store: CorpusStore,
) -> list[CitationRecord]:
    """Attach corpus ids for records found in the metadata snapshot.

    Matching is by normalized DOI first, then exact normalized title. A
    matched document is fetched, ingested, and stored unless the corpus
    already has it; fetch or parse failures leave the record unresolved.
    """
    by_doi: dict[str, dict] = {}
    by_title: dict[str, dict] = {}
    for row in metadata_rows:
        doi_value = row.get("doi")
        if isinstance(doi_value, str):
            doi = normalize_doi(doi_value)
            if doi and doi not in by_doi:
                by_doi[doi] = row
        title = row.get("title")
        if isinstance(title, str) and title.strip():
            key = normalize_title(title)
            if key not in by_title:
                by_title[key] = row
    resolved: list[CitationRecord] = []
    for record in records:
        row = None
        if record.doi and record.doi in by_doi:
            row = by_doi[record.doi]
        elif record.title.strip() and normalize_title(record.title) in by_title:
            row = by_title[normalize_title(record.title)]
        if row is None:
            resolved.append(record)
            continue
        fulltext_id = str(row.get("id", "")).strip()
        if not fulltext_id:
            resolved.append(record)
            continue
        if not store.exists(fulltext_id, "paper"):
            try:
                data = fetcher(row)
                document = ingest_paper_data(data, fallback_id=fulltext_id)
                if document.paper_id != fulltext_id:
                    document = replace(document, paper_id=fulltext_id)
                store.store(document)
            except (EnrichmentError, IngestError, KeyError) as exc:
                log.warning("could not resolve full text for %s: %s", fulltext_id, exc)
                resolved.append(record)
                continue
        resolved.append(replace(record, fulltext_id=fulltext_id))
    return resolved


def manifest_to_dict(manifest: NeighborhoodManifest) -> dict:
    return {
        "paper_id": manifest.paper_id,
        "fetched_at": manifest.fetched_at,
        "records": [
            {
                "direction": r.direction,
                "title": r.title,
                "doi": r.doi,
                "rank": r.rank,
                "fulltext_id": r.fulltext_id,
            }
            for r in manifest.records
        ],
    }


def manifest_from_dict(data: dict) -> NeighborhoodManifest:
    return NeighborhoodManifest(
        paper_id=data["paper_id"],
        fetched_at=data["fetched_at"],
        records=tuple(
            CitationRecord(
                direction=r["direction"],
                title=r["title"],
                doi=r.get("doi"),
                rank=r.get("rank"),
                fulltext_id=r.get("fulltext_id"),
            )
            for r in data["records"]
        ),
    )
