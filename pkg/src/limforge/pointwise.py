"""Pairwise-judge coverage evaluation and matched-pair performance metrics.

A judge model decides whether each (ground-truth, generated) statement pair
matches; both argument orders are asked to cancel position bias, and a
containment-phrased prompt breaks disagreements. Coverage math follows the
indicator-sum formulation; true positives default to a maximum bipartite
matching so one generated statement cannot claim several ground truths.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from statistics import mean
from typing import Mapping, Sequence

import requests
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .corpus import LimitationSet, LimitationStatement
from .gateway import ChatRequest, LLMGateway, cosine
from .refinery import load_prompt
from .textmetrics import bleu, cohens_kappa, jaccard, pair_scores, rouge1, rougeL
from .textproc import split_sentences, tokenize

logger = logging.getLogger(__name__)

TP_MODES = ("raw_pairs", "dedup_matching")
MMR_LAMBDA = 0.5
DEFAULT_KEYWORD_K = 10

_YES_NO_RE = re.compile(r"^\W*(yes|no)\b", re.IGNORECASE)
_YES_NO_NUDGE = "Answer with a single word: Yes or No."


class EvaluationError(Exception):
    pass


@dataclass(frozen=True)
class PairVerdict:
    gt_index: int
    gen_index: int
    verdicts: tuple[bool, ...]
    final: bool

    def __post_init__(self) -> None:
        if len(self.verdicts) > 3:
            raise ValueError("at most three prompt verdicts per pair")


@dataclass(frozen=True)
class MatchSet:
    paper_id: str
    x: int
    y: int
    matched_pairs: tuple[tuple[int, int], ...]
    verdicts: tuple[PairVerdict, ...] = ()

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError("set sizes cannot be negative")
        if len(self.matched_pairs) > self.x * self.y:
            raise ValueError("more matched pairs than possible pairs")
        for k, l in self.matched_pairs:
            if not (0 <= k < self.x and 0 <= l < self.y):
                raise ValueError(f"pair ({k}, {l}) out of range for x={self.x}, y={self.y}")


@dataclass(frozen=True)
class CoverageResult:
    a_gi: float
    a_hi: float
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    tp_mode: str


@dataclass(frozen=True)
class PerformanceResult:
    pair_count: int
    rouge1: float | None
    rougeL: float | None
    bleu: float | None
    jaccard: float | None
    cosine: float | None
    contextual_f: float | None


@dataclass(frozen=True)
class CorpusReport:
    rows: tuple[CoverageResult, ...]
    a_g_percent: float
    a_h_percent: float
    precision: float
    recall: float
    f1: float


# -- judge ----------------------------------------------------------------


def _parse_yes_no(reply: str) -> bool | None:
    match = _YES_NO_RE.match(reply)
    if not match:
        return None
    return match.group(1).lower() == "yes"


def _ask_yes_no(gateway: LLMGateway, model_name: str, prompt: str) -> bool | None:
    messages = [("user", prompt)]
    verdict = _parse_yes_no(
        gateway.chat(ChatRequest(model_name=model_name, messages=tuple(messages)))
    )
    if verdict is None:
        messages.append(("user", _YES_NO_NUDGE))
        verdict = _parse_yes_no(
            gateway.chat(ChatRequest(model_name=model_name, messages=tuple(messages)))
        )
    return verdict


def judge_pair(
    g: LimitationStatement,
    h: LimitationStatement,
    gateway: LLMGateway,
    model_name: str,
    gt_index: int = 0,
    gen_index: int = 0,
) -> PairVerdict:
    """Two order-swapped similarity prompts; containment breaks disagreement.

    The containment prompt sees the pair in lexicographic text order, so the
    whole procedure is invariant to swapping the arguments. Any reply still
    unparseable after one nudged retry makes the pair a non-match.
    """
    if not g.text.strip() or not h.text.strip():
        raise EvaluationError("judge requires two non-empty statements")
    similarity = load_prompt("judge_similarity")
    first = _ask_yes_no(
        gateway, model_name, similarity.format(first=g.text, second=h.text)
    )
    if first is None:
        logger.warning("unparseable judge reply for pair (%d, %d)", gt_index, gen_index)
        return PairVerdict(gt_index=gt_index, gen_index=gen_index, verdicts=(), final=False)
    second = _ask_yes_no(
        gateway, model_name, similarity.format(first=h.text, second=g.text)
    )
    if second is None:
        logger.warning("unparseable judge reply for pair (%d, %d)", gt_index, gen_index)
        return PairVerdict(
            gt_index=gt_index, gen_index=gen_index, verdicts=(first,), final=False
        )
    if first == second:
        return PairVerdict(
            gt_index=gt_index, gen_index=gen_index, verdicts=(first, second), final=first
        )
    low, high = sorted([g.text, h.text])
    tiebreak = _ask_yes_no(
        gateway,
        model_name,
        load_prompt("judge_containment").format(first=low, second=high),
    )
    if tiebreak is None:
        logger.warning("unparseable tiebreak reply for pair (%d, %d)", gt_index, gen_index)
        return PairVerdict(
            gt_index=gt_index, gen_index=gen_index, verdicts=(first, second), final=False
        )
    return PairVerdict(
        gt_index=gt_index,
        gen_index=gen_index,
        verdicts=(first, second, tiebreak),
        final=tiebreak,
    )


def match_all(
    gt_set: LimitationSet,
    gen_set: LimitationSet,
    gateway: LLMGateway,
    model_name: str,
) -> MatchSet:
    """Judge every (ground truth, generated) pair in deterministic order."""
    x, y = len(gt_set), len(gen_set)
    if x < 1 or y < 1:
        raise EvaluationError("both statement sets must be non-empty")
    verdicts = []
    for k, g in enumerate(gt_set.statements):
        for l, h in enumerate(gen_set.statements):
            verdicts.append(
                judge_pair(g, h, gateway, model_name, gt_index=k, gen_index=l)
            )
    matched = tuple((v.gt_index, v.gen_index) for v in verdicts if v.final)
    return MatchSet(
        paper_id=gt_set.paper_id,
        x=x,
        y=y,
        matched_pairs=matched,
        verdicts=tuple(verdicts),
    )


# -- coverage -------------------------------------------------------------


def _max_matching_size(pairs: Sequence[tuple[int, int]], x: int, y: int) -> int:
    if not pairs or x == 0 or y == 0:
        return 0
    rows = [k for k, _ in pairs]
    cols = [l for _, l in pairs]
    graph = csr_matrix(([1] * len(pairs), (rows, cols)), shape=(x, y))
    assignment = maximum_bipartite_matching(graph, perm_type="column")
    return int(sum(1 for value in assignment if value >= 0))


def coverage(match_set: MatchSet, tp_mode: str = "dedup_matching") -> CoverageResult:
    if tp_mode not in TP_MODES:
        raise ValueError(f"unknown tp_mode: {tp_mode!r}")
    x, y = match_set.x, match_set.y
    covered_g = {k for k, _ in match_set.matched_pairs}
    covered_h = {l for _, l in match_set.matched_pairs}
    sum_cg = len(covered_g)
    sum_ch = len(covered_h)
    a_gi = sum_cg / x if x else 0.0
    a_hi = sum_ch / y if y else 0.0
    if tp_mode == "raw_pairs":
        tp = len(match_set.matched_pairs)
    else:
        tp = _max_matching_size(match_set.matched_pairs, x, y)
    fp = x - sum_cg
    fn = y - sum_ch
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return CoverageResult(
        a_gi=a_gi,
        a_hi=a_hi,
        tp=tp,
        fp=fp,
        fn=fn,
        precision=precision,
        recall=recall,
        f1=f1,
        tp_mode=tp_mode,
    )


def aggregate(results: Sequence[CoverageResult]) -> CorpusReport:
    """Unweighted means over papers; coverage shown as percentages."""
    if not results:
        raise EvaluationError("cannot aggregate zero coverage results")
    return CorpusReport(
        rows=tuple(results),
        a_g_percent=mean(r.a_gi for r in results) * 100.0,
        a_h_percent=mean(r.a_hi for r in results) * 100.0,
        precision=mean(r.precision for r in results),
        recall=mean(r.recall for r in results),
        f1=mean(r.f1 for r in results),
    )


# -- matched-pair performance ----------------------------------------------


class SidecarError(Exception):
    pass


class SidecarClient:
    """Client for the contextual-score service: POST /score, GET /health."""

    def __init__(
        self,
        base_url: str,
        timeout: float = 10.0,
        session: requests.Session | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def health(self) -> bool:
        try:
            response = self.session.get(f"{self.base_url}/health", timeout=self.timeout)
            return response.status_code == 200
        except requests.RequestException:
            return False

    def score(self, candidates: Sequence[str], references: Sequence[str]) -> dict:
        if len(candidates) != len(references):
            raise SidecarError("candidates and references must align")
        try:
            response = self.session.post(
                f"{self.base_url}/score",
                json={"candidates": list(candidates), "references": list(references)},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise SidecarError(f"sidecar unreachable: {exc}") from exc
        if response.status_code != 200:
            raise SidecarError(f"sidecar returned HTTP {response.status_code}")
        payload = response.json()
        for field in ("precision", "recall", "f1"):
            if field not in payload or len(payload[field]) != len(candidates):
                raise SidecarError(f"malformed sidecar reply: missing {field}")
        return payload


def performance(
    match_set: MatchSet,
    gt_set: LimitationSet,
    gen_set: LimitationSet,
    gateway: LLMGateway,
    sidecar: SidecarClient | None = None,
) -> PerformanceResult:
    """Mean text metrics over matched pairs only; empty match set flags absent."""
    pairs = sorted(set(match_set.matched_pairs))
    if not pairs:
        return PerformanceResult(
            pair_count=0,
            rouge1=None,
            rougeL=None,
            bleu=None,
            jaccard=None,
            cosine=None,
            contextual_f=None,
        )
    references = [gt_set.statements[k].text for k, _ in pairs]
    candidates = [gen_set.statements[l].text for _, l in pairs]
    scores = [pair_scores(c, r) for c, r in zip(candidates, references)]
    embeddings = gateway.embed(candidates + references)
    cosines = [
        cosine(embeddings[i], embeddings[len(pairs) + i]) for i in range(len(pairs))
    ]
    contextual: float | None = None
    if sidecar is not None:
        try:
            reply = sidecar.score(candidates, references)
            contextual = mean(float(v) for v in reply["f1"])
        except SidecarError as exc:
            logger.warning("contextual score unavailable: %s", exc)
    return PerformanceResult(
        pair_count=len(pairs),
        rouge1=mean(s.rouge1 for s in scores),
        rougeL=mean(s.rougeL for s in scores),
        bleu=mean(s.bleu for s in scores),
        jaccard=mean(s.jaccard for s in scores),
        cosine=mean(cosines),
        contextual_f=contextual,
    )


# -- keyword and heading views ----------------------------------------------


def _candidate_phrases(text: str) -> list[str]:
    tokens = tokenize(text)
    seen: list[str] = []
    for phrase in tokens + [" ".join(p) for p in zip(tokens, tokens[1:])]:
        if phrase not in seen:
            seen.append(phrase)
    return seen


def extract_keywords(text: str, gateway: LLMGateway, k: int = DEFAULT_KEYWORD_K) -> list[str]:
    """Top-k 1-2-gram phrases by cosine to the document embedding, diversified
    with maximal marginal relevance at lambda=0.5. Ties break lexicographically."""
    candidates = _candidate_phrases(text)
    if not candidates:
        return []
    doc_embedding = gateway.embed_one(text)
    embeddings = dict(zip(candidates, gateway.embed(candidates)))
    relevance = {c: cosine(embeddings[c], doc_embedding) for c in candidates}
    selected: list[str] = []
    remaining = set(candidates)
    while remaining and len(selected) < k:
        def mmr_score(candidate: str) -> float:
            if not selected:
                return relevance[candidate]
            redundancy = max(
                cosine(embeddings[candidate], embeddings[s]) for s in selected
            )
            return MMR_LAMBDA * relevance[candidate] - (1 - MMR_LAMBDA) * redundancy

        best = min(remaining, key=lambda c: (-mmr_score(c), c))
        selected.append(best)
        remaining.remove(best)
    return selected


def keyword_eval(
    gt_set: LimitationSet,
    gen_set: LimitationSet,
    gateway: LLMGateway,
    k: int = DEFAULT_KEYWORD_K,
) -> dict[str, float]:
    """Jaccard over top-k keyword sets and cosine over their joined strings."""
    if len(gt_set) < 1 or len(gen_set) < 1:
        raise EvaluationError("keyword evaluation requires non-empty sets")
    doc_g = " ".join(s.text for s in gt_set.statements)
    doc_h = " ".join(s.text for s in gen_set.statements)
    keywords_g = extract_keywords(doc_g, gateway, k)
    keywords_h = extract_keywords(doc_h, gateway, k)
    union = set(keywords_g) | set(keywords_h)
    overlap = set(keywords_g) & set(keywords_h)
    jaccard_score = len(overlap) / len(union) if union else 0.0
    cosine_score = cosine(
        gateway.embed_one(" ".join(keywords_g)), gateway.embed_one(" ".join(keywords_h))
    )
    return {"jaccard": jaccard_score, "cosine": cosine_score}


def derive_heading(statement: LimitationStatement) -> str:
    """Explicit heading, else first-sentence text before a colon, else the
    first eight whitespace tokens."""
    if statement.heading:
        return statement.heading
    sentences = split_sentences(statement.text)
    clause = sentences[0] if sentences else statement.text
    if ":" in clause:
        return clause.split(":", 1)[0].strip()
    return " ".join(clause.split()[:8])


def heading_eval(
    gt_set: LimitationSet,
    gen_set: LimitationSet,
    gateway: LLMGateway,
    sidecar: SidecarClient | None = None,
) -> float:
    """Similarity of the joined heading lists: sidecar contextual F when
    available, embedding cosine otherwise."""
    heading_g = "; ".join(derive_heading(s) for s in gt_set.statements)
    heading_h = "; ".join(derive_heading(s) for s in gen_set.statements)
    if sidecar is not None:
        try:
            reply = sidecar.score([heading_h], [heading_g])
            return float(reply["f1"][0])
        except SidecarError as exc:
            logger.warning("heading contextual score unavailable: %s", exc)
    return cosine(gateway.embed_one(heading_g), gateway.embed_one(heading_h))


def compare_judges(labels: Mapping[str, Sequence[int]]) -> dict[tuple[str, str], float]:
    """Cohen's kappa for every unordered pair of label vectors."""
    names = sorted(labels)
    table: dict[tuple[str, str], float] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            table[(a, b)] = cohens_kappa(labels[a], labels[b])
    return table


# -- per-paper record --------------------------------------------------------


@dataclass(frozen=True)
class PaperEvaluation:
    paper_id: str
    match_set: MatchSet
    coverage_raw: CoverageResult
    coverage_dedup: CoverageResult
    performance: PerformanceResult


def evaluate_sets(
    gt_set: LimitationSet,
    gen_set: LimitationSet,
    gateway: LLMGateway,
    model_name: str,
    sidecar: SidecarClient | None = None,
) -> PaperEvaluation:
    match_set = match_all(gt_set, gen_set, gateway, model_name)
    return PaperEvaluation(
        paper_id=gt_set.paper_id,
        match_set=match_set,
        coverage_raw=coverage(match_set, "raw_pairs"),
        coverage_dedup=coverage(match_set, "dedup_matching"),
        performance=performance(match_set, gt_set, gen_set, gateway, sidecar),
    )


def evaluation_to_dict(evaluation: PaperEvaluation) -> dict:
    match_set = evaluation.match_set
    return {
        "paper_id": evaluation.paper_id,
        "x": match_set.x,
        "y": match_set.y,
        "matched_pairs": [list(p) for p in match_set.matched_pairs],
        "verdicts": [
            {
                "gt_index": v.gt_index,
                "gen_index": v.gen_index,
                "verdicts": list(v.verdicts),
                "final": v.final,
            }
            for v in match_set.verdicts
        ],
        "coverage": {
            mode: {
                "a_gi": result.a_gi,
                "a_hi": result.a_hi,
                "tp": result.tp,
                "fp": result.fp,
                "fn": result.fn,
                "precision": result.precision,
                "recall": result.recall,
                "f1": result.f1,
            }
            for mode, result in (
                ("raw_pairs", evaluation.coverage_raw),
                ("dedup_matching", evaluation.coverage_dedup),
            )
        },
        "performance": {
            "pair_count": evaluation.performance.pair_count,
            "rouge1": evaluation.performance.rouge1,
            "rougeL": evaluation.performance.rougeL,
            "bleu": evaluation.performance.bleu,
            "jaccard": evaluation.performance.jaccard,
            "cosine": evaluation.performance.cosine,
            "contextual_f": evaluation.performance.contextual_f,
        },
    }
