"""Answer-string normalization shared by the record model and the evaluator."""

from __future__ import annotations

import re
import string

_ARTICLES = {"a", "an", "the"}

_NUMBER_WORDS = {
    "zero": "0",
    "one": "1",
    "two": "2",
    "three": "3",
    "four": "4",
    "five": "5",
    "six": "6",
    "seven": "7",
    "eight": "8",
    "nine": "9",
    "ten": "10",
}

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_WS = re.compile(r"\s+")


def normalize_answer(text: str) -> str:
    """Canonicalize an answer string for matching.

    Lowercases, strips punctuation, drops articles, collapses whitespace and
    maps the number words zero..ten to digits ("Four" -> "4").
    """
    lowered = text.lower().translate(_PUNCT_TABLE)
    tokens = []
    for tok in lowered.split():
        if tok in _ARTICLES:
            continue
        tokens.append(_NUMBER_WORDS.get(tok, tok))
    return _WS.sub(" ", " ".join(tokens)).strip()


def word_count(text: str) -> int:
    """Whitespace-token count, the convention used for all length statistics."""
    return len(text.split())


def modal_answer(answers: list[str]) -> str:
    """Most frequent normalized answer; ties broken lexicographically."""
    counts: dict[str, int] = {}
    for raw in answers:
        key = normalize_answer(raw)
        counts[key] = counts.get(key, 0) + 1
    best = max(counts.items(), key=lambda kv: (kv[1], ), default=("", 0))[1]
    return min(k for k, v in counts.items() if v == best) if counts else ""
