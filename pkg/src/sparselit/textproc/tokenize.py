"""Lowercasing tokenizer with stopword/number filtering and Porter2 stemming."""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable

from .porter2 import stem

WORD_RE = re.compile(r"[^\W_]+")

STOPWORDS_RESOURCE = "english_stopwords_v1.txt"


@dataclass(frozen=True)
class Token:
    stem: str
    start: int
    end: int

    @property
    def source_span(self) -> tuple[int, int]:
        return (self.start, self.end)


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a stopword file, one word per line (blank lines ignored)."""
    text = Path(path).read_text(encoding="utf-8")
    return frozenset(line.strip().lower() for line in text.splitlines() if line.strip())


@lru_cache(maxsize=1)
def default_stopwords() -> frozenset[str]:
    """The 175-word English list shipped with the package."""
    text = resources.files("sparselit.data").joinpath(STOPWORDS_RESOURCE).read_text(encoding="utf-8")
    return frozenset(line.strip() for line in text.splitlines() if line.strip())


def tokenize(text: str, stopwords: Iterable[str] | None = None) -> list[Token]:
    """Split ``text`` into stemmed tokens.

    Splitting happens on non-alphanumeric boundaries. Tokens are lowercased,
    dropped when they are stopwords or digits only, then stemmed. A stem that
    itself lands on a stopword is also dropped.
    """
    stops = default_stopwords() if stopwords is None else frozenset(stopwords)
    tokens = []
    for match in WORD_RE.finditer(text):
        word = match.group().lower()
        if word.isdigit() or word in stops:
            continue
        s = stem(word)
        if not s or s in stops or s.isdigit():
            continue
        tokens.append(Token(s, match.start(), match.end()))
    return tokens


def stems(text: str, stopwords: Iterable[str] | None = None) -> list[str]:
    return [t.stem for t in tokenize(text, stopwords)]
