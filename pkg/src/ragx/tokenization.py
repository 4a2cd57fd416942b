"""Deterministic tokenizer shared by chunking, indexing, retrieval, and budgeting.

The rule is deliberately simple so that token counts are reproducible
without any model files: text is split on Unicode whitespace, and inside
each non-space run every punctuation character (Unicode category P*) is
a token of its own; maximal runs of the remaining characters are word
tokens.
"""

from __future__ import annotations

import re
import unicodedata
from functools import lru_cache

_SEGMENT_RE = re.compile(r"\S+")
# Fast path: segments made only of word chars need no per-char scan.
_PLAIN_WORD_RE = re.compile(r"\w+$", re.UNICODE)


@lru_cache(maxsize=8192)
def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


@lru_cache(maxsize=65536)
def _split_segment(segment: str) -> tuple[str, ...]:
    tokens: list[str] = []
    word_start = -1
    for i, ch in enumerate(segment):
        if _is_punct(ch):
            if word_start >= 0:
                tokens.append(segment[word_start:i])
                word_start = -1
            tokens.append(ch)
        elif word_start < 0:
            word_start = i
    if word_start >= 0:
        tokens.append(segment[word_start:])
    return tuple(tokens)


def tokenize(text: str) -> list[str]:
    """Split text into word and single-character punctuation tokens."""
    tokens: list[str] = []
    for match in _SEGMENT_RE.finditer(text):
        segment = match.group()
        if _PLAIN_WORD_RE.match(segment) and "_" not in segment:
            tokens.append(segment)
        else:
            tokens.extend(_split_segment(segment))
    return tokens


def count_tokens(text: str) -> int:
    """Number of tokens in ``text``; additive across whitespace joins."""
    total = 0
    for match in _SEGMENT_RE.finditer(text):
        segment = match.group()
        if _PLAIN_WORD_RE.match(segment) and "_" not in segment:
            total += 1
        else:
            total += len(_split_segment(segment))
    return total


def terms_of(text: str) -> list[str]:
    """Lowercased tokens, as used for sparse indexing and lexical scoring."""
    return [t.lower() for t in tokenize(text)]
