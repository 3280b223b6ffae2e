"""Parse model replies into (heading, text) items and render them back.

The grammar accepts numbered or bulleted lists with optional bold
"**Heading**:" prefixes, falling back to paragraph splits when no list
markers are present. ``parse_items`` after ``render_items`` recovers the
original items whenever headings are explicit.
"""

from __future__ import annotations

import re

_ITEM_START_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s+|[-*•]\s+(?!\*))")
# Numbered markers may continue a line after sentence punctuation or a colon.
_INLINE_MARKER_RE = re.compile(r"(?<=[.!?:])\s+(?=\d+\s*[.)]\s)")
_BOLD_HEADING_RE = re.compile(r"^\s*\*\*(?P<heading>.+?)\*\*\s*[:\-]?\s*(?P<rest>.*)$", re.DOTALL)
_PLAIN_HEADING_RE = re.compile(r"^(?P<heading>[^:\n.!?]{1,80}):\s+(?P<rest>.+)$", re.DOTALL)
_BOLD_MARK_RE = re.compile(r"\*\*(.+?)\*\*")
_WORD_RE = re.compile(r"\w")

_MAX_HEADING_TOKENS = 12


def _split_heading(item_text: str) -> tuple[str | None, str]:
    match = _BOLD_HEADING_RE.match(item_text)
    if match and match.group("rest").strip():
        return match.group("heading").strip(), match.group("rest").strip()
    match = _PLAIN_HEADING_RE.match(item_text)
    if match:
        heading = match.group("heading").strip()
        if heading and len(heading.split()) <= _MAX_HEADING_TOKENS:
            return heading, match.group("rest").strip()
    return None, item_text.strip()


def parse_items(raw: str) -> list[tuple[str | None, str]]:
    """Items of a model reply as (heading, text) pairs, markup stripped.

    Text before the first list marker is treated as preamble and dropped;
    replies without markers split on blank lines instead. Items without any
    word character are discarded.
    """
    lines = _INLINE_MARKER_RE.sub("\n", raw).splitlines()
    pieces: list[str] = []
    current: list[str] | None = None
    saw_marker = False
    for line in lines:
        if _ITEM_START_RE.match(line):
            saw_marker = True
            if current is not None:
                pieces.append("\n".join(current))
            current = [_ITEM_START_RE.sub("", line, count=1)]
        elif current is not None:
            current.append(line)
    if current is not None:
        pieces.append("\n".join(current))
    if not saw_marker:
        pieces = re.split(r"\n\s*\n", raw)
    items: list[tuple[str | None, str]] = []
    for piece in pieces:
        piece = piece.strip()
        if not piece:
            continue
        heading, text = _split_heading(piece)
        text = _BOLD_MARK_RE.sub(r"\1", text).strip()
        if not _WORD_RE.search(text):
            continue
        items.append((heading, text))
    return items


def render_items(items: list[tuple[str | None, str]]) -> str:
    """Canonical numbered rendering of (heading, text) items."""
    lines = []
    for i, (heading, text) in enumerate(items, start=1):
        if heading:
            lines.append(f"{i}. **{heading}**: {text}")
        else:
            lines.append(f"{i}. {text}")
    return "\n".join(lines)
