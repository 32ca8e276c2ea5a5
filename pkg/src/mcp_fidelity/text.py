"""Tokenizer, lexicon tagger and noun-phrase chunker.

Chunks follow the grammar ``DET? (ADJ|NUM)* NOUN+``. Numbers sit in the
modifier slot so that quantities such as ``299792458 m/s`` chunk together.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources

DET, ADJ, NOUN, VERB, NUM, OTHER = "DET", "ADJ", "NOUN", "VERB", "NUM", "OTHER"

# numbers (with optional currency, separators, decimals, percent, unit suffix),
# then words with internal joiners such as m/s or self-driving
_TOKEN_RE = re.compile(r"\$?\d+(?:[,_]\d+)*(?:\.\d+)?%?[^\W\d_]*|[^\W_]+(?:[-/'’][^\W_]+)*")
_DIGIT_SEP_RE = re.compile(r"(?<=\d)[,_](?=\d)")

_NOUN_SUFFIXES = ("tion", "sion", "ness", "ment", "ity", "ism", "ship", "ance", "ence")
_ADJ_SUFFIXES = ("ous", "ful", "ive", "less", "ical", "able")


@lru_cache(maxsize=None)
def lexicon() -> dict[str, str]:
    raw = json.loads(resources.files("mcp_fidelity.data").joinpath("lexicon.json").read_text("utf-8"))
    table = {}
    # later classes win, so closed-class entries override any accidental noun listing
    for tag in (NOUN, ADJ, OTHER, VERB, DET):
        for word in raw.get(tag, []):
            table[word] = tag
    return table


def normalize_number(token: str) -> str:
    token = _DIGIT_SEP_RE.sub("", token)
    return token.rstrip(",_")


def segments(text: str) -> list[list[str]]:
    """Token runs separated by punctuation.

    Tokens are lowercased, punctuation between them is dropped, and digit
    separators inside numbers are removed. Punctuation still ends a segment so
    that chunks never span a sentence or clause boundary.
    """
    folded = text.casefold()
    out: list[list[str]] = []
    current: list[str] = []
    pos = 0
    for m in _TOKEN_RE.finditer(folded):
        if current and folded[pos:m.start()].strip():
            out.append(current)
            current = []
        tok = m.group()
        if tok[0].isdigit() or tok[0] == "$":
            tok = normalize_number(tok)
        current.append(tok)
        pos = m.end()
    if current:
        out.append(current)
    return out


def tokenize(text: str) -> list[str]:
    """Flat token list; see ``segments``."""
    return [tok for seg in segments(text) for tok in seg]


def tag_token(token: str) -> str:
    if token[0].isdigit() or token[0] == "$":
        return NUM
    tag = lexicon().get(token)
    if tag is not None:
        return tag
    if token.endswith("ly"):
        return OTHER
    if token.endswith(_NOUN_SUFFIXES):
        return NOUN
    if token.endswith(_ADJ_SUFFIXES):
        return ADJ
    return NOUN


def tag(tokens: list[str]) -> list[tuple[str, str]]:
    return [(t, tag_token(t)) for t in tokens]


def chunk(tagged: list[tuple[str, str]]) -> list[list[str]]:
    """Greedy left-to-right match of ``DET? (ADJ|NUM)* NOUN+``."""
    chunks = []
    i, n = 0, len(tagged)
    while i < n:
        j = i
        if tagged[j][1] == DET:
            j += 1
        while j < n and tagged[j][1] in (ADJ, NUM):
            j += 1
        k = j
        while k < n and tagged[k][1] == NOUN:
            k += 1
        if k > j:
            chunks.append([tok for tok, _ in tagged[i:k]])
            i = k
        else:
            i += 1
    return chunks


def chunk_text(text: str) -> list[list[str]]:
    return [c for seg in segments(text) for c in chunk(tag(seg))]


def noun_phrases(text: str) -> list[str]:
    """All chunk surfaces in order of appearance, including single-token ones."""
    return [" ".join(c) for c in chunk_text(text)]


def count_occurrences(tokens: list[str], phrase: list[str]) -> int:
    """Non-overlapping occurrences of ``phrase`` in ``tokens``."""
    count, i, m = 0, 0, len(phrase)
    if m == 0:
        return 0
    while i + m <= len(tokens):
        if tokens[i:i + m] == phrase:
            count += 1
            i += m
        else:
            i += 1
    return count
