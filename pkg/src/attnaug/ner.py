"""Entity mention detection with pluggable backends.

The built-in backend is a case-insensitive gazetteer (longest match first)
plus a capitalized-run heuristic for unlisted names.  Anything smarter
attaches through the external line-JSON protocol.  Word spans always come
from the same whitespace segmentation the tokenizer uses, so they index
directly into attention profiles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .errors import IngestError, ProtocolError
from .protocol import LineJsonBackend
from .textnorm import split_sentences, strip_word, word_char_spans, words as split_words

ENTITY_TYPES = (
    "PERSON", "NORP", "FACILITY", "ORG", "GPE", "LOCATION",
    "PRODUCT", "EVENT", "WORK_OF_ART", "LAW", "LANGUAGE", "OTHER",
)

# Every type except the catch-all heuristic bucket.
DEFAULT_ALLOWED_TYPES = frozenset(t for t in ENTITY_TYPES if t != "OTHER")


@dataclass(frozen=True)
class EntityMention:
    surface: str
    entity_type: str
    char_span: tuple[int, int]
    word_span: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "surface": self.surface,
            "type": self.entity_type,
            "start": self.char_span[0],
            "end": self.char_span[1],
            "word_start": self.word_span[0],
            "word_end": self.word_span[1],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EntityMention":
        return cls(
            surface=obj["surface"],
            entity_type=obj["type"],
            char_span=(obj["start"], obj["end"]),
            word_span=(obj["word_start"], obj["word_end"]),
        )


def _check_mention(mention: EntityMention, text: str) -> None:
    start, end = mention.char_span
    if not (0 <= start < end <= len(text)):
        raise ValueError(f"mention {mention.surface!r} char span {mention.char_span} out of bounds")
    if text[start:end] != mention.surface:
        raise ValueError(
            f"mention surface {mention.surface!r} does not match text slice "
            f"{text[start:end]!r} at {mention.char_span}"
        )


class Backend(Protocol):
    def recognize(self, text: str) -> list[EntityMention]: ...


# ---------------------------------------------------------------------------
# Gazetteer backend
# ---------------------------------------------------------------------------

class Gazetteer:
    """Case-insensitive surface list; keys match on stripped word cores."""

    def __init__(self, entries: dict[str, str]):
        self._map: dict[tuple[str, ...], str] = {}
        self.max_words = 0
        for surface, entity_type in entries.items():
            key = tuple(strip_word(w)[0].lower() for w in split_words(surface))
            key = tuple(part for part in key if part)
            if not key:
                raise ValueError(f"gazetteer entry {surface!r} has no matchable words")
            if entity_type not in ENTITY_TYPES:
                raise ValueError(f"gazetteer entry {surface!r} has unknown type {entity_type!r}")
            self._map[key] = entity_type
            self.max_words = max(self.max_words, len(key))

    def __len__(self) -> int:
        return len(self._map)

    def lookup(self, key: tuple[str, ...]) -> str | None:
        return self._map.get(key)

    def save(self, path: str | Path) -> None:
        surfaces = {" ".join(key): t for key, t in self._map.items()}
        Path(path).write_text(
            json.dumps(surfaces, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "Gazetteer":
        try:
            entries = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise IngestError(f"{path}: not valid JSON: {exc.msg}") from exc
        if not isinstance(entries, dict):
            raise IngestError(f"{path}: expected an object mapping surface to type")
        return cls(entries)


class GazetteerBackend:
    def __init__(self, gazetteer: Gazetteer, capitalized_heuristic: bool = True):
        self.gazetteer = gazetteer
        self.capitalized_heuristic = capitalized_heuristic

    def recognize(self, text: str) -> list[EntityMention]:
        word_list = split_words(text)
        spans = word_char_spans(text)
        cores = [strip_word(w) for w in word_list]
        norms = [core.lower() for core, _, _ in cores]
        n = len(word_list)
        taken = [False] * n
        mentions: list[EntityMention] = []

        i = 0
        while i < n:
            matched = False
            for length in range(min(self.gazetteer.max_words, n - i), 0, -1):
                key = tuple(norms[i : i + length])
                entity_type = self.gazetteer.lookup(key)
                if entity_type is None:
                    continue
                start = spans[i][0] + cores[i][1]
                end = spans[i + length - 1][0] + cores[i + length - 1][2]
                mentions.append(
                    EntityMention(
                        surface=text[start:end],
                        entity_type=entity_type,
                        char_span=(start, end),
                        word_span=(i, i + length),
                    )
                )
                for j in range(i, i + length):
                    taken[j] = True
                i += length
                matched = True
                break
            if not matched:
                i += 1

        if self.capitalized_heuristic:
            mentions.extend(self._capitalized_runs(text, word_list, spans, cores, taken))
        mentions.sort(key=lambda m: m.word_span)
        return mentions

    def _capitalized_runs(self, text, word_list, spans, cores, taken) -> list[EntityMention]:
        # Maximal runs of capitalized words not claimed by the gazetteer;
        # a single capitalized word at a sentence start is ordinary casing,
        # not evidence of a name, so lone sentence-initial words are dropped.
        sentence_starts = {start for start, _ in split_sentences(word_list)}
        out: list[EntityMention] = []
        n = len(word_list)

        def capitalized(i: int) -> bool:
            core = cores[i][0]
            return bool(core) and core[0].isupper() and not taken[i]

        i = 0
        while i < n:
            if not capitalized(i):
                i += 1
                continue
            j = i
            while j < n and capitalized(j):
                j += 1
            if not (j - i == 1 and i in sentence_starts):
                start = spans[i][0] + cores[i][1]
                end = spans[j - 1][0] + cores[j - 1][2]
                out.append(
                    EntityMention(
                        surface=text[start:end],
                        entity_type="OTHER",
                        char_span=(start, end),
                        word_span=(i, j),
                    )
                )
            i = j
        return out


# ---------------------------------------------------------------------------
# External backend
# ---------------------------------------------------------------------------

def word_span_for_chars(text: str, start: int, end: int) -> tuple[int, int]:
    """Smallest word span covering [start, end) of text."""
    spans = word_char_spans(text)
    first = last = None
    for i, (ws, we) in enumerate(spans):
        if ws < end and we > start:
            if first is None:
                first = i
            last = i
    if first is None or last is None:
        raise ValueError(f"char span ({start}, {end}) covers no words")
    return first, last + 1


class ExternalNERBackend:
    """Adapter for a spawned recognizer speaking the line-JSON protocol.

    Request: {"text": ...}; response: {"mentions": [{"surface", "type",
    "start", "end"}, ...]}.  Every response mention is validated against
    the text before use.
    """

    def __init__(self, transport: LineJsonBackend):
        self.transport = transport

    def recognize(self, text: str) -> list[EntityMention]:
        response = self.transport.request({"text": text})
        raw = response.get("mentions")
        if not isinstance(raw, list):
            raise ProtocolError(
                "NER response missing 'mentions' list", line=json.dumps(response)[:200]
            )
        mentions = []
        for item in raw:
            if not isinstance(item, dict):
                raise ProtocolError("NER mention is not an object", line=repr(item)[:200])
            try:
                surface = item["surface"]
                entity_type = item["type"]
                start, end = int(item["start"]), int(item["end"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ProtocolError(f"NER mention malformed: {exc}", line=repr(item)[:200]) from exc
            if entity_type not in ENTITY_TYPES:
                raise ProtocolError(f"unknown entity type {entity_type!r}", line=repr(item)[:200])
            if not (0 <= start < end <= len(text)) or text[start:end] != surface:
                raise ProtocolError(
                    f"mention {surface!r} does not match text slice at ({start}, {end})",
                    line=repr(item)[:200],
                )
            mentions.append(
                EntityMention(
                    surface=surface,
                    entity_type=entity_type,
                    char_span=(start, end),
                    word_span=word_span_for_chars(text, start, end),
                )
            )
        mentions.sort(key=lambda m: m.word_span)
        for a, b in zip(mentions, mentions[1:]):
            if a.word_span[1] > b.word_span[0]:
                raise ProtocolError(
                    f"overlapping mentions {a.surface!r} and {b.surface!r}"
                )
        return mentions


# ---------------------------------------------------------------------------
# Front door
# ---------------------------------------------------------------------------

def recognize(text: str, backend: Backend) -> list[EntityMention]:
    """Run a backend and enforce the mention invariants on its output."""
    mentions = backend.recognize(text)
    for mention in mentions:
        _check_mention(mention, text)
    for a, b in zip(mentions, mentions[1:]):
        if a.word_span[1] > b.word_span[0]:
            raise ValueError(f"backend produced overlapping mentions {a.surface!r}, {b.surface!r}")
    return mentions


def filter_by_type(
    mentions: Iterable[EntityMention], allowed: Sequence[str] | frozenset = DEFAULT_ALLOWED_TYPES
) -> list[EntityMention]:
    allowed_set = frozenset(allowed)
    return [m for m in mentions if m.entity_type in allowed_set]
