"""Porter2 (Snowball English) stemmer.

A direct implementation of the original English Snowball algorithm, including
its two exception lists and the ``gener``/``commun``/``arsen`` region rule.
"""

from __future__ import annotations

from functools import lru_cache

VOWELS = frozenset("aeiouy")
LI_ENDINGS = frozenset("cdeghkmnrt")
DOUBLES = ("bb", "dd", "ff", "gg", "mm", "nn", "pp", "rr", "tt")

EXCEPTIONS = {
    "skis": "ski",
    "skies": "sky",
    "dying": "die",
    "lying": "lie",
    "tying": "tie",
    "idly": "idl",
    "gently": "gentl",
    "ugly": "ugli",
    "early": "earli",
    "only": "onli",
    "singly": "singl",
    "sky": "sky",
    "news": "news",
    "howe": "howe",
    "atlas": "atlas",
    "cosmos": "cosmos",
    "bias": "bias",
    "andes": "andes",
}

# Words left untouched once step 1a has run.
POST_1A_EXCEPTIONS = frozenset(
    ["inning", "outing", "canning", "herring", "earring", "proceed", "exceed", "succeed"]
)

REGION_PREFIXES = ("gener", "commun", "arsen")

STEP2 = (
    ("ization", "ize"),
    ("ational", "ate"),
    ("fulness", "ful"),
    ("ousness", "ous"),
    ("iveness", "ive"),
    ("tional", "tion"),
    ("biliti", "ble"),
    ("lessli", "less"),
    ("entli", "ent"),
    ("ation", "ate"),
    ("alism", "al"),
    ("aliti", "al"),
    ("ousli", "ous"),
    ("iviti", "ive"),
    ("fulli", "ful"),
    ("enci", "ence"),
    ("anci", "ance"),
    ("abli", "able"),
    ("izer", "ize"),
    ("ator", "ate"),
    ("alli", "al"),
    ("bli", "ble"),
    ("ogi", "og"),
    ("li", ""),
)

STEP3 = (
    ("ational", "ate"),
    ("tional", "tion"),
    ("alize", "al"),
    ("icate", "ic"),
    ("iciti", "ic"),
    ("ative", ""),
    ("ical", "ic"),
    ("ness", ""),
    ("ful", ""),
)

STEP4 = (
    "ement", "ance", "ence", "able", "ible", "ment", "ant", "ent", "ism", "ate",
    "iti", "ous", "ive", "ize", "ion", "al", "er", "ic",
)


def _is_vowel(ch: str) -> bool:
    return ch in VOWELS


def _region_after(word: str, start: int) -> int:
    """Position just past the first non-vowel that follows a vowel, from ``start``."""
    n = len(word)
    i = start
    while i < n and not _is_vowel(word[i]):
        i += 1
    while i < n and _is_vowel(word[i]):
        i += 1
    if i >= n:
        return n
    return i + 1


def _regions(word: str) -> tuple[int, int]:
    for prefix in REGION_PREFIXES:
        if word.startswith(prefix):
            r1 = len(prefix)
            break
    else:
        r1 = _region_after(word, 0)
    return r1, _region_after(word, r1)


def _ends_short_syllable(word: str) -> bool:
    n = len(word)
    if n >= 3:
        a, b, c = word[-3], word[-2], word[-1]
        if not _is_vowel(a) and _is_vowel(b) and not _is_vowel(c) and c not in "wxY":
            return True
    if n == 2:
        return _is_vowel(word[0]) and not _is_vowel(word[1])
    return False


def _mark_ys(word: str) -> str:
    chars = list(word)
    for i, ch in enumerate(chars):
        if ch == "y" and (i == 0 or _is_vowel(chars[i - 1])):
            chars[i] = "Y"
    return "".join(chars)


def _step1a(word: str) -> str:
    for suffix in ("'s'", "'s", "'"):
        if word.endswith(suffix):
            word = word[: -len(suffix)]
            break
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith("ied") or word.endswith("ies"):
        return word[:-2] if len(word) > 4 else word[:-1]
    if word.endswith("us") or word.endswith("ss"):
        return word
    if word.endswith("s"):
        # a vowel somewhere before the letter preceding the s
        if any(_is_vowel(ch) for ch in word[:-2]):
            return word[:-1]
    return word


def _step1b(word: str, r1: int) -> str:
    for suffix in ("eedly", "eed"):
        if word.endswith(suffix):
            if len(word) - len(suffix) >= r1:
                return word[: -len(suffix)] + "ee"
            return word
    for suffix in ("ingly", "edly", "ing", "ed"):
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if not any(_is_vowel(ch) for ch in stem):
                return word
            if stem.endswith(("at", "bl", "iz")):
                return stem + "e"
            if stem.endswith(DOUBLES):
                return stem[:-1]
            if len(stem) == r1 and _ends_short_syllable(stem):
                return stem + "e"
            return stem
    return word


def _step1c(word: str) -> str:
    if len(word) > 2 and word[-1] in "yY" and not _is_vowel(word[-2]):
        return word[:-1] + "i"
    return word


def _step2(word: str, r1: int) -> str:
    for suffix, repl in STEP2:
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if len(stem) < r1:
                return word
            if suffix == "ogi":
                return stem + repl if stem.endswith("l") else word
            if suffix == "li":
                return stem if stem and stem[-1] in LI_ENDINGS else word
            return stem + repl
    return word


def _step3(word: str, r1: int, r2: int) -> str:
    for suffix, repl in STEP3:
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if len(stem) < r1:
                return word
            if suffix == "ative" and len(stem) < r2:
                return word
            return stem + repl
    return word


def _step4(word: str, r2: int) -> str:
    for suffix in STEP4:
        if word.endswith(suffix):
            stem = word[: -len(suffix)]
            if len(stem) < r2:
                return word
            if suffix == "ion":
                return stem if stem.endswith(("s", "t")) else word
            return stem
    return word


def _step5(word: str, r1: int, r2: int) -> str:
    if word.endswith("e"):
        stem = word[:-1]
        if len(stem) >= r2 or (len(stem) >= r1 and not _ends_short_syllable(stem)):
            return stem
    elif word.endswith("l"):
        if len(word) - 1 >= r2 and word[-2:-1] == "l":
            return word[:-1]
    return word


@lru_cache(maxsize=65536)
def stem(word: str) -> str:
    """Return the Porter2 stem of a lowercase word.

    Words of two letters or fewer are returned unchanged.
    """
    if word in EXCEPTIONS:
        return EXCEPTIONS[word]
    if len(word) <= 2:
        return word
    if word.startswith("'"):
        word = word[1:]
    word = _mark_ys(word)
    r1, r2 = _regions(word)

    word = _step1a(word)
    if word in POST_1A_EXCEPTIONS:
        return word.replace("Y", "y")
    word = _step1b(word, r1)
    word = _step1c(word)
    word = _step2(word, r1)
    word = _step3(word, r1, r2)
    word = _step4(word, r2)
    word = _step5(word, r1, r2)
    return word.replace("Y", "y")
