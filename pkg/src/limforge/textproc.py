"""Shared text primitives: sentence splitting, tokenization, edit similarity.

Every module that reasons about sentences or tokens goes through these
functions so that granularity never drifts between pipeline stages.
"""

from __future__ import annotations

import re

# Words that end with a period without ending a sentence.
ABBREVIATIONS = frozenset(
    {
        "al",
        "approx",
        "cf",
        "dr",
        "e.g",
        "eq",
        "etc",
        "fig",
        "i.e",
        "jr",
        "mr",
        "mrs",
        "ms",
        "no",
        "prof",
        "resp",
        "sec",
        "st",
        "vol",
        "vs",
    }
)

_BOUNDARY_RE = re.compile(r"([.!?]+)(\s+)")
_TOKEN_RE = re.compile(r"[^\W_]+")
_WS_RE = re.compile(r"\s+")
_HEADING_ENUM_RE = re.compile(r"^\s*\d+(\.\d+)*[.)]?\s*")
_NON_ALNUM_RE = re.compile(r"[^\w\s]|_")

# Characters that plausibly open a new sentence after terminal punctuation.
_SENTENCE_OPENERS = set('"\'([{*#-•0123456789')


def normalize_whitespace(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends."""
    return _WS_RE.sub(" ", text).strip()


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens at Unicode word boundaries, punctuation stripped."""
    return _TOKEN_RE.findall(text.lower())


def joined_tokens(text: str) -> str:
    """Canonical token-joined form used by fuzzy comparisons."""
    return " ".join(tokenize(text))


def normalize_heading(text: str) -> str:
    """Heading comparison key: drop enumeration, punctuation, case, extra space."""
    text = _HEADING_ENUM_RE.sub("", text)
    text = _NON_ALNUM_RE.sub(" ", text.lower())
    return normalize_whitespace(text)


def token_estimate(text: str) -> int:
    """Cheap token count (whitespace-separated words) used for chunk budgets."""
    return len(text.split())


def _preceding_word(text: str, pos: int) -> str:
    """The word immediately before ``pos``, including internal periods."""
    i = pos
    while i > 0 and (text[i - 1].isalpha() or text[i - 1] == "."):
        i -= 1
    return text[i:pos]


def _is_abbreviation_boundary(text: str, punct_start: int, punct: str) -> bool:
    if punct != ".":
        return False
    word = _preceding_word(text, punct_start).lower().rstrip(".")
    if not word:
        return False
    return word.lstrip(".") in ABBREVIATIONS


def sentence_spans(text: str) -> list[tuple[int, int]]:
    """Character spans of sentences, such that text[a:b] is the sentence.

    Boundaries are terminal punctuation runs followed by whitespace and a
    plausible sentence opener (uppercase, digit, quote, bracket, or list
    marker). Words on the abbreviation exception list do not split.
    """
    spans: list[tuple[int, int]] = []
    n = len(text)
    start = 0
    while start < n and text[start].isspace():
        start += 1
    for match in _BOUNDARY_RE.finditer(text):
        if match.start(1) < start:
            continue
        if _is_abbreviation_boundary(text, match.start(1), match.group(1)):
            continue
        nxt = match.end()
        if nxt < n:
            ch = text[nxt]
            if not (ch.isupper() or ch in _SENTENCE_OPENERS):
                continue
        spans.append((start, match.end(1)))
        start = nxt
    if start < n:
        end = n
        while end > start and text[end - 1].isspace():
            end -= 1
        if end > start:
            spans.append((start, end))
    return spans


def split_sentences(text: str) -> list[str]:
    """Sentences of ``text`` per the shared boundary rules."""
    return [text[a:b] for a, b in sentence_spans(text)]


def levenshtein(a: str, b: str) -> int:
    """Edit distance with unit-cost insert, delete, and substitute."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def fuzzy_similarity(a: str, b: str) -> float:
    """Normalized edit similarity: 1 - distance / max(len). Empty pair is 1."""
    if not a and not b:
        return 1.0
    longest = max(len(a), len(b))
    return 1.0 - levenshtein(a, b) / longest


def token_fuzzy_similarity(a: str, b: str) -> float:
    """Fuzzy similarity over the token-joined forms of both texts."""
    return fuzzy_similarity(joined_tokens(a), joined_tokens(b))
