"""Rule-based sentence splitting."""

from __future__ import annotations

import re

# Lowercased, without the trailing period.
ABBREVIATIONS = frozenset(
    [
        "fig", "figs", "eq", "eqs", "ref", "refs", "tab", "sec", "sect", "no", "nos",
        "vol", "pp", "ch", "e.g", "i.e", "cf", "vs", "al", "approx", "ca", "dr", "mr",
        "mrs", "ms", "prof", "st", "jr", "sr", "inc", "ltd", "co", "suppl", "resp",
    ]
)

BOUNDARY_RE = re.compile(r"[.!?][\"')\]]*\s+(?=[\"'(\[]?[A-Z0-9])")


def _is_abbreviation(text: str, period: int) -> bool:
    i = period
    while i > 0 and (text[i - 1].isalpha() or text[i - 1] == "."):
        i -= 1
    return text[i:period].lower() in ABBREVIATIONS


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Return ``(start, end)`` spans that partition ``text`` into sentences.

    Trailing whitespace belongs to the sentence it follows, so the spans tile
    the input exactly.
    """
    if not text:
        return []
    spans = []
    start = 0
    for m in BOUNDARY_RE.finditer(text):
        if text[m.start()] == "." and _is_abbreviation(text, m.start()):
            continue
        spans.append((start, m.end()))
        start = m.end()
    spans.append((start, len(text)))
    return spans
