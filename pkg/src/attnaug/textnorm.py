"""Shared text normalization: one analyzer for indexing, matching and chunking.

Every component that compares text (lexical index, answer matching, MRC
scoring, noun-chunk extraction) goes through the functions here so that
"same token" means the same thing everywhere.
"""

from __future__ import annotations

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+")
_WS_RE = re.compile(r"\s+")
_WORD_RE = re.compile(r"\S+")

ARTICLES = ("a", "an", "the")

# Small closed-class list used by the noun chunker and the lexical reader
# score.  Deliberately short: content words must survive.
STOPWORDS = frozenset(
    """
    a an the and or but if then else when while of in on at to from by with
    without for as is are was were be been being am do does did doing have has
    had having will would shall should can could may might must not no nor so
    than too very this that these those there here it its he she his her him
    they them their we us our you your i me my who whom whose which what where
    why how all any both each few more most other some such only own same s t
    just don now
    """.split()
)

PRONOUNS = frozenset(
    "i you he she it we they him her them his hers its this that these those".split()
)


def normalize_ws(text: str) -> str:
    """Collapse whitespace runs to single spaces and strip the ends."""
    return _WS_RE.sub(" ", text).strip()


def lower_ws(text: str) -> str:
    """Lowercased, whitespace-normalized text.

    Word count and order match ``normalize_ws`` exactly, so word indices
    computed on the cased text stay valid.
    """
    return normalize_ws(text).lower()


def words(text: str) -> list[str]:
    """Whitespace-separated words after whitespace normalization."""
    return normalize_ws(text).split(" ") if normalize_ws(text) else []


def word_char_spans(text: str) -> list[tuple[int, int]]:
    """Character span (start, end) of each whitespace-separated word."""
    return [m.span() for m in _WORD_RE.finditer(text)]


def analyze(text: str) -> list[str]:
    """The shared analyzer: lowercase, split on non-alphanumeric runs."""
    return _TOKEN_RE.findall(text.lower())


def content_words(text: str) -> list[str]:
    """Analyzer tokens with stopwords removed."""
    return [t for t in analyze(text) if t not in STOPWORDS]


def normalize_answer_tokens(text: str) -> list[str]:
    """Answer normalization: analyzer tokens with leading articles dropped."""
    tokens = analyze(text)
    while tokens and tokens[0] in ARTICLES:
        tokens = tokens[1:]
    return tokens


def normalize_answer(text: str) -> str:
    return " ".join(normalize_answer_tokens(text))


def contains_sublist(haystack: list[str], needle: list[str]) -> bool:
    """True iff ``needle`` occurs as a contiguous run inside ``haystack``."""
    n = len(needle)
    if n == 0:
        return False
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def answer_occurs(text: str, answer: str) -> bool:
    """True iff the normalized answer occurs contiguously in the text."""
    return contains_sublist(analyze(text), normalize_answer_tokens(answer))


def strip_word(word: str) -> tuple[str, int, int]:
    """Strip non-alphanumeric characters from both ends of a word.

    Returns (core, start_offset, end_offset) where the offsets locate the
    core inside the original word; a fully non-alphanumeric word yields an
    empty core with start == end.
    """
    start = 0
    end = len(word)
    while start < end and not word[start].isalnum():
        start += 1
    while end > start and not word[end - 1].isalnum():
        end -= 1
    return word[start:end], start, end


_CLOSERS = "\"')]}"
_OPENERS = "\"'([{"


def split_sentences(word_list: list[str]) -> list[tuple[int, int]]:
    """Split a word sequence into sentence word-spans.

    A sentence boundary falls between word i and word i+1 when word i ends
    with one of ``.?!`` (ignoring trailing quotes/brackets) and word i+1
    starts with an uppercase letter (ignoring leading quotes/brackets).
    Returns half-open ``(start, end)`` spans covering all words.
    """
    if not word_list:
        return []
    spans = []
    start = 0
    for i in range(len(word_list) - 1):
        w = word_list[i].rstrip(_CLOSERS)
        nxt = word_list[i + 1].lstrip(_OPENERS)
        if w and w[-1] in ".?!" and nxt and nxt[0].isupper():
            spans.append((start, i + 1))
            start = i + 1
    spans.append((start, len(word_list)))
    return spans
