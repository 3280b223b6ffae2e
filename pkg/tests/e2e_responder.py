"""Synthetic three-paper corpus and a deterministic rule-based chat responder.

The responder answers every pipeline prompt (refinement, review segmentation,
merging, reranking, judging, generation) from the prompt text alone, so the
same rules drive scripted-backend unit tests and the recorded fixture set.
"""

import json
import re
from pathlib import Path

from limforge.gateway import ChatRequest
from limforge.itemparse import parse_items, render_items
from limforge.textproc import split_sentences

# -- anchor papers -----------------------------------------------------------

PAPERS = [
    {
        "paper_id": "p_alpha",
        "title": "Calibrated Sequence Labeling under Domain Shift",
        "year": 2021,
        "venue": "SynthConf",
        "sections": [
            {
                "heading": "Abstract",
                "text": "We present a calibrated sequence labeling model for domain shift. Calibration quality is measured across domains.",
            },
            {
                "heading": "Method",
                "text": "The calibration layer rescales logits with a temperature learned per domain. Training alternates between labeling loss and calibration loss.",
            },
            {
                "heading": "Experiments",
                "text": "We evaluate on three benchmark suites with fixed splits. Scores are averaged over five seeds.",
            },
            {
                "heading": "Limitations",
                "text": "The calibration layer assumes access to labeled target batches. Our experiments only cover English benchmarks. The temperature estimate is unstable for tiny domains.",
            },
        ],
        "references": [
            {
                "raw": "Neighbor One: Temperature Scaling in Depth. doi:10.1234/n1",
                "title": "Neighbor One: Temperature Scaling in Depth",
                "doi": "10.1234/n1",
            },
            {
                "raw": "Neighbor Two: Domain Benchmarks Revisited. doi:10.1234/n2",
                "title": "Neighbor Two: Domain Benchmarks Revisited",
                "doi": "10.1234/n2",
            },
        ],
    },
    {
        "paper_id": "p_beta",
        "title": "Replay Scheduling for Streaming Feature Stores",
        "year": 2022,
        "venue": "SynthConf",
        "sections": [
            {
                "heading": "Approach",
                "text": "Replay scheduling batches stale features by arrival time. A cost model decides when to refresh each feature group.",
            },
            {
                "heading": "Discussion",
                "text": "The scheduler behaves well under steady load. A limitation of this analysis is the reliance on synthetic traces. Replay fidelity is approximate for bursty workloads.",
            },
            {
                "heading": "Summary",
                "text": "Replay scheduling cuts refresh cost without hurting freshness targets.",
            },
        ],
        "references": [
            {
                "raw": "Semantic Cousin Beta. doi:10.1234/n4",
                "title": "Semantic Cousin Beta",
                "doi": "10.1234/n4",
            },
            {
                "raw": "An Unarchived Technical Report, 2019.",
                "title": "An Unarchived Technical Report",
                "doi": None,
            },
        ],
    },
    {
        "paper_id": "p_gamma",
        "title": "Sparse Probes for Layerwise Attribution",
        "year": 2022,
        "venue": "SynthConf",
        "sections": [
            {
                "heading": "Probing Setup",
                "text": "Sparse probes attribute predictions to layers with a frozen backbone. Probe weights are penalized toward zero.",
            },
            {
                "heading": "Limitations",
                "text": "Probe sparsity assumes attribution mass concentrates in few layers. The study only covers encoder architectures.",
            },
            {
                "heading": "Closing Remarks",
                "text": "Sparse probes recover layer roles at a fraction of the usual cost.",
            },
        ],
        "references": [
            {
                "raw": "Neighbor One: Temperature Scaling in Depth. doi:10.1234/n1",
                "title": "Neighbor One: Temperature Scaling in Depth",
                "doi": "10.1234/n1",
            }
        ],
    },
]

REVIEWS = {
    "p_alpha": [
        "The paper is clearly written and the method is simple. However the evaluation lacks ablation studies on the temperature estimator.",
        "Results look strong. The benchmark selection only covers high-resource languages, which narrows the scope of the claims.",
    ],
    "p_beta": [
        "Interesting system. The cost model lacks a sensitivity analysis, and the trace generator is never validated."
    ],
}

GOLD = {
    "p_alpha": "The calibration layer assumes access to labeled target batches. Our experiments only cover English benchmarks. The temperature estimate is unstable for tiny domains.",
    "p_beta": "A limitation of this analysis is the reliance on synthetic traces. Replay fidelity is approximate for bursty workloads.",
    "p_gamma": "Probe sparsity assumes attribution mass concentrates in few layers. The study only covers encoder architectures.",
}

# -- neighborhood documents ----------------------------------------------------

NEIGHBOR_DOCS = {
    "arxiv-n1": {
        "title": "Neighbor One: Temperature Scaling in Depth",
        "sections": [
            {
                "heading": "Overview",
                "text": "Temperature scaling calibrates posteriors with a single scalar. The method is popular for its simplicity.",
            },
            {
                "heading": "Analysis",
                "text": "The approach carries a strong assumption that validation and test distributions match. Estimates exhibit bias when confidence bins are sparse.",
            },
        ],
    },
    "arxiv-n2": {
        "title": "Neighbor Two: Domain Benchmarks Revisited",
        "sections": [
            {
                "heading": "Overview",
                "text": "We revisit domain transfer benchmarks and their evaluation protocols.",
            },
            {
                "heading": "Findings",
                "text": "Benchmark reuse introduces selection bias across studies. Split leakage inflates transfer scores.",
            },
        ],
    },
    "arxiv-n3": {
        "title": "Citing Work Alpha",
        "sections": [
            {
                "heading": "Overview",
                "text": "We build on calibrated labeling for low-resource settings.",
            },
            {
                "heading": "Caveats",
                "text": "Our reuse of the calibration layer inherits its assumption of labeled target batches.",
            },
        ],
    },
    "arxiv-n4": {
        "title": "Semantic Cousin Beta",
        "sections": [
            {
                "heading": "Overview",
                "text": "Feature freshness trades against refresh cost in streaming stores.",
            },
            {
                "heading": "Threats",
                "text": "Synthetic workloads embed a stationarity assumption that real traffic violates.",
            },
        ],
    },
}

SNAPSHOT_ROWS = [
    {"id": doc_id, "doi": f"10.1234/{doc_id.split('-')[1]}", "title": doc["title"], "document": doc}
    for doc_id, doc in sorted(NEIGHBOR_DOCS.items())
]

# -- citation API fixtures -------------------------------------------------------

OPENALEX_URL = "https://api.openalex.org/works"
SEMANTIC_URL = "https://api.semanticscholar.org/graph/v1/paper/search"

CITED_BY_RESULTS = {
    "p_alpha": [
        {"title": "Citing Work Alpha", "doi": "https://doi.org/10.1234/n3"},
        {"title": "An Uncatalogued Citing Work", "doi": None},
    ],
    "p_beta": [{"title": "Neighbor Two: Domain Benchmarks Revisited", "doi": "https://doi.org/10.1234/n2"}],
    "p_gamma": [{"title": "A Citing Work Outside the Snapshot", "doi": None}],
}

SEMANTIC_RESULTS = {
    "p_alpha": [{"title": "Semantic Cousin Beta", "externalIds": {"DOI": "10.1234/n4"}}],
    "p_beta": [{"title": "Neighbor One: Temperature Scaling in Depth", "externalIds": {"DOI": "10.1234/n1"}}],
    "p_gamma": [{"title": "Semantic Cousin Beta", "externalIds": {"DOI": "10.1234/n4"}}],
}

_TITLE_TO_ID = {p["title"]: p["paper_id"] for p in PAPERS}


def citation_handler(url: str, params: dict) -> dict:
    """Canned OpenAlex and relevance-search responses for the anchor papers."""
    if url == OPENALEX_URL:
        ident = params["filter"].split("cites:", 1)[1]
        return {
            "meta": {"next_cursor": None},
            "results": CITED_BY_RESULTS.get(ident, []),
        }
    if url == SEMANTIC_URL:
        paper_id = _TITLE_TO_ID.get(params["query"], "")
        return {"data": SEMANTIC_RESULTS.get(paper_id, [])}
    raise AssertionError(f"unexpected request: {url} {params}")


class HandlerHTTPClient:
    """Serves canned JSON responses from a handler callable."""

    def __init__(self, handler=citation_handler) -> None:
        self.handler = handler
        self.calls: list[tuple[str, dict]] = []

    def get_json(self, url: str, params: dict) -> dict:
        self.calls.append((url, dict(params)))
        return self.handler(url, dict(params))


def write_source_corpus(src_dir: str | Path) -> Path:
    """Materialize the anchor corpus as papers/.json, reviews/.json, gold/*.txt."""
    src = Path(src_dir)
    (src / "papers").mkdir(parents=True, exist_ok=True)
    (src / "reviews").mkdir(exist_ok=True)
    (src / "gold").mkdir(exist_ok=True)
    for paper in PAPERS:
        stem = paper["paper_id"]
        (src / "papers" / f"{stem}.json").write_text(
            json.dumps(paper, indent=1), encoding="utf-8"
        )
        if stem in REVIEWS:
            (src / "reviews" / f"{stem}.json").write_text(
                json.dumps({"paper_id": stem, "reviews": REVIEWS[stem]}), encoding="utf-8"
            )
        if stem in GOLD:
            (src / "gold" / f"{stem}.txt").write_text(GOLD[stem], encoding="utf-8")
    return src


def write_snapshot(path: str | Path) -> Path:
    snapshot = Path(path)
    snapshot.parent.mkdir(parents=True, exist_ok=True)
    snapshot.write_text(json.dumps(SNAPSHOT_ROWS, indent=1), encoding="utf-8")
    return snapshot


# -- rule-based chat responder ----------------------------------------------------

_LIMIT_WORDS = (
    "assumes",
    "assumption",
    "only",
    "unstable",
    "lacks",
    "limitation",
    "shortcoming",
    "approximate",
    "narrows",
    "inherits",
    "bias",
    "violates",
)

_CONTENT_TOKEN_RE = re.compile(r"[a-z]{7,}")


def _between(text: str, start: str, end: str) -> str:
    i = text.index(start) + len(start)
    j = text.index(end, i)
    return text[i:j]


def _delimited_block(text: str, ordinal: int = 1) -> str:
    parts = text.split("\n---\n")
    return parts[2 * ordinal - 1]


def _numbered(sentences: list[str]) -> str:
    items = [(f"Point {i}", s) for i, s in enumerate(sentences, start=1)]
    return render_items(items)


def _content_tokens(text: str) -> set[str]:
    return set(_CONTENT_TOKEN_RE.findall(text.lower()))


def _judge_statements(prompt: str, tail_marker: str) -> tuple[str, str]:
    first = _between(prompt, "Statement 1:\n", "\n\nStatement 2:\n")
    second = _between(prompt, "Statement 2:\n", tail_marker)
    return first, second


def rule_responder(request: ChatRequest) -> str:
    """Deterministic stand-in for every chat role the pipeline uses."""
    prompt = request.messages[0][1]
    if "Segment this text into distinct limitation statements" in prompt:
        span_text = _delimited_block(prompt)
        return _numbered(split_sentences(span_text))
    if "consolidated peer reviews" in prompt:
        review_text = _delimited_block(prompt)
        picked = [
            s
            for s in split_sentences(review_text)
            if any(w in s.lower() for w in ("lacks", "only covers", "never validated"))
        ]
        return _numbered(picked)
    if "two lists of limitation statements" in prompt:
        author_block = _between(prompt, "List A:\n", "\n\nList B:\n")
        reviewer_block = _between(prompt, "List B:\n", "\n\nMerge the two lists")
        merged = parse_items(author_block)
        seen = {text for _, text in merged}
        for heading, text in parse_items(reviewer_block):
            if text not in seen:
                merged.append((heading, text))
                seen.add(text)
        return render_items(merged)
    if "limitation lists produced from different chunks" in prompt:
        merged = []
        seen = set()
        for heading, text in parse_items(prompt):
            if text not in seen:
                merged.append((heading, text))
                seen.add(text)
        return render_items(merged[:15])
    if "Score the relevance of this excerpt" in prompt:
        excerpt = _delimited_block(prompt, ordinal=2)
        relevant = "assumption" in excerpt.lower() or "bias" in excerpt.lower()
        return "9" if relevant else "3"
    if "Are these two statements similar" in prompt:
        first, second = _judge_statements(prompt, "\n\nAre these two statements")
        shared = _content_tokens(first) & _content_tokens(second)
        return "Yes" if shared else "No"
    if "Does either statement contain or subsume" in prompt:
        first, second = _judge_statements(prompt, "\n\nDoes either statement")
        a, b = _content_tokens(first), _content_tokens(second)
        return "Yes" if a <= b or b <= a else "No"
    if "identify the limitations of this work" in prompt:
        paper_text = _delimited_block(prompt)
        picked = [
            s
            for s in split_sentences(paper_text)
            if any(w in s.lower() for w in _LIMIT_WORDS)
        ]
        if "citation neighborhood" in prompt:
            context_text = _delimited_block(prompt, ordinal=2)
            for sentence in split_sentences(context_text):
                lowered = sentence.lower()
                if "assumption" in lowered or "bias" in lowered:
                    picked.append(f"The method inherits a concern from prior work: {sentence}")
        if not picked:
            picked = ["The evaluated scenarios remain narrow."]
        return _numbered(picked[:15])
    raise AssertionError(f"unrecognized prompt:\n{prompt[:200]}")
