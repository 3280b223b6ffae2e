"""Reference-based text similarity metrics over the shared tokenizer.

All metrics return values in [0, 1], score 1 on identical inputs, and 0 on
token-disjoint inputs. Inputs that tokenize to nothing score 0 and set the
degeneracy flag on the bundled result.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

from .textproc import tokenize


@dataclass(frozen=True)
class PairScores:
    """All lexical metrics for one candidate/reference pair."""

    rouge1: float
    rougeL: float
    bleu: float
    jaccard: float
    degenerate: bool


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def rouge1(candidate: str, reference: str) -> float:
    """Unigram-overlap F1 with clipped (multiset) counts."""
    cand = Counter(tokenize(candidate))
    ref = Counter(tokenize(reference))
    if not cand or not ref:
        return 0.0
    overlap = sum((cand & ref).values())
    return _f1(overlap / sum(cand.values()), overlap / sum(ref.values()))


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b, start=1):
            if x == y:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[-1]


def rougeL(candidate: str, reference: str) -> float:
    """Longest-common-subsequence F1."""
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    return _f1(lcs / len(cand), lcs / len(ref))


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_order: int = 4) -> float:
    """Geometric mean of 1..4-gram precisions with brevity penalty.

    Zero counts at orders >= 2 get add-one smoothing; a zero unigram
    precision stays zero so token-disjoint pairs score exactly 0. Orders
    longer than the candidate are excluded from the mean, so short
    identical sentences still score exactly 1.
    """
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        return 0.0
    log_sum = 0.0
    orders = 0
    for n in range(1, max_order + 1):
        total = len(cand) - n + 1
        if total <= 0:
            continue
        matches = sum((_ngram_counts(cand, n) & _ngram_counts(ref, n)).values())
        if matches == 0:
            if n == 1:
                return 0.0
            precision = 1.0 / (total + 1)
        else:
            precision = matches / total
        log_sum += math.log(precision)
        orders += 1
    geometric_mean = math.exp(log_sum / orders)
    if len(cand) >= len(ref):
        brevity = 1.0
    else:
        brevity = math.exp(1.0 - len(ref) / len(cand))
    return brevity * geometric_mean


def jaccard(candidate: str, reference: str) -> float:
    """Intersection over union of unique token sets."""
    cand = set(tokenize(candidate))
    ref = set(tokenize(reference))
    if not cand or not ref:
        return 0.0
    return len(cand & ref) / len(cand | ref)


def pair_scores(candidate: str, reference: str) -> PairScores:
    """All lexical metrics at once, with a degeneracy flag for empty inputs."""
    degenerate = not tokenize(candidate) or not tokenize(reference)
    return PairScores(
        rouge1=rouge1(candidate, reference),
        rougeL=rougeL(candidate, reference),
        bleu=bleu(candidate, reference),
        jaccard=jaccard(candidate, reference),
        degenerate=degenerate,
    )


def cohens_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Chance-corrected agreement between two aligned label vectors."""
    if len(a) != len(b):
        raise ValueError(f"label vectors differ in length: {len(a)} vs {len(b)}")
    if not a:
        raise ValueError("label vectors are empty")
    n = len(a)
    observed = sum(1 for x, y in zip(a, b) if x == y) / n
    counts_a = Counter(a)
    counts_b = Counter(b)
    expected = sum(
        (counts_a[label] / n) * (counts_b[label] / n)
        for label in set(counts_a) | set(counts_b)
    )
    if expected == 1.0:
        return 1.0 if observed == 1.0 else 0.0
    return (observed - expected) / (1.0 - expected)
