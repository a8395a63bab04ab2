"""Question generation from passages.

Two backends share one request shape: a deterministic template generator
(sentence selection + span substitution, no learned parts) and an adapter
for an external neural generator speaking the line-JSON protocol.  Both
return None for a passage they cannot handle; callers count skips rather
than treating them as failures.

Also builds (question, entity, passage, answer) training quadruples from
gold reading-comprehension triples, and runs the probe that compares
retrieval scores of questions conditioned on the most- vs least-attended
entity of each passage.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from .attention import entity_attention, extract_profile, highest_attended, lowest_attended
from .corpus import GoldExample, Passage, load_jsonl, write_jsonl
from .encoder import DualEncoderModel, encode as encode_seq
from .errors import GenerationError, ProtocolError
from .hashing import derive_seed
from .ner import EntityMention, Gazetteer, GazetteerBackend
from .protocol import LineJsonBackend
from .textnorm import (
    ARTICLES,
    PRONOUNS,
    STOPWORDS,
    answer_occurs,
    contains_sublist,
    split_sentences,
    strip_word,
    word_char_spans,
    words as split_words,
)
from .tokenizer import Vocabulary, encode as tokenize

PROVENANCE_CONDITIONED = "conditioned"
PROVENANCE_UNCONDITIONED = "unconditioned"

_YEAR_RE = re.compile(r"^\d{4}$")
_WHERE_TYPES = {"GPE", "LOCATION", "FACILITY"}


@dataclass(frozen=True)
class SamplingParams:
    top_p: float = 0.95
    top_k: int = 50
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.top_k < 0:
            raise ValueError(f"top_k must be >= 0, got {self.top_k}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


@dataclass
class GenerationRequest:
    passage: Passage
    conditioning_entity: EntityMention | None = None
    sampling: SamplingParams = field(default_factory=SamplingParams)


@dataclass
class SyntheticExample:
    question: str
    answer: str
    passage_id: str
    conditioning_entity: EntityMention | None
    provenance: str
    mrc_score: float | None = None
    retrieval_score: float | None = None

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "answer": self.answer,
            "passage_id": self.passage_id,
            "entity": self.conditioning_entity.to_dict() if self.conditioning_entity else None,
            "provenance": self.provenance,
            "mrc_score": self.mrc_score,
            "retrieval_score": self.retrieval_score,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticExample":
        provenance = obj["provenance"]
        if provenance not in (PROVENANCE_CONDITIONED, PROVENANCE_UNCONDITIONED):
            raise ValueError(f"unknown provenance {provenance!r}")
        entity = obj.get("entity")
        return cls(
            question=obj["question"],
            answer=obj["answer"],
            passage_id=obj["passage_id"],
            conditioning_entity=EntityMention.from_dict(entity) if entity else None,
            provenance=provenance,
            mrc_score=obj.get("mrc_score"),
            retrieval_score=obj.get("retrieval_score"),
        )


@dataclass(frozen=True)
class TrainingQuad:
    question: str
    conditioning_entity: str
    passage_id: str
    answer: str


def load_synthetic(path: str | Path) -> list[SyntheticExample]:
    return [SyntheticExample.from_dict(obj) for obj in load_jsonl(path)]


def write_synthetic(path: str | Path, examples: Sequence[SyntheticExample]) -> None:
    write_jsonl((ex.to_dict() for ex in examples), path)


# ---------------------------------------------------------------------------
# Template backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Span:
    start: int  # word index, inclusive
    end: int  # word index, exclusive
    kind: str  # "subject" | "entity" | "capitalized" | "year"
    entity_type: str | None = None


class TemplateGenerator:
    """Rule-based generation: pick a sentence, swap a span for a wh-word.

    A conditioned request uses the sentence containing the target entity
    and prefers the sentence's subject as the answer span, then the nearest
    other entity, then any capitalized word outside the target.  Sampling
    parameters are accepted for interface compatibility; only the seed is
    used (for unconditioned sentence choice).
    """

    def __init__(self, mention_backend=None):
        # Used only to find candidate answer entities. The empty gazetteer
        # leaves the capitalized-run heuristic as the sole source.
        self.mention_backend = mention_backend or GazetteerBackend(Gazetteer({}))

    # -- shared machinery ---------------------------------------------------

    def _sentence_of(self, sentences: list[tuple[int, int]], word_pos: int) -> tuple[int, int]:
        for start, end in sentences:
            if start <= word_pos < end:
                return start, end
        return sentences[-1]

    def _subject_span(self, word_list, cores, s_start: int, s_end: int) -> _Span | None:
        i = s_start
        while i < s_end and (not cores[i][0] or cores[i][0].lower() in STOPWORDS):
            i += 1
        if i >= s_end:
            return None
        j = i
        while j < s_end and cores[j][0] and cores[j][0][0].isupper():
            j += 1
        if j == i:
            return None  # sentence opens with a lowercase non-stopword
        if j - i == 1 and cores[i][0].lower() in PRONOUNS:
            return None
        return _Span(i, j, "subject")

    def _candidate_spans(
        self,
        text: str,
        word_list: list[str],
        cores,
        s_start: int,
        s_end: int,
        mentions: Sequence[EntityMention],
    ) -> list[_Span]:
        spans: list[_Span] = []
        subject = self._subject_span(word_list, cores, s_start, s_end)
        if subject is not None:
            spans.append(subject)
        for m in mentions:
            ws, we = m.word_span
            if s_start <= ws and we <= s_end:
                spans.append(_Span(ws, we, "entity", m.entity_type))
        for i in range(s_start, s_end):
            core = cores[i][0]
            if core and _YEAR_RE.match(core):
                spans.append(_Span(i, i + 1, "year"))
            elif core and core[0].isupper():
                spans.append(_Span(i, i + 1, "capitalized"))
        # de-duplicate identical (start, end), keeping the earliest kind
        seen: set[tuple[int, int]] = set()
        unique = []
        for span in spans:
            if (span.start, span.end) not in seen:
                seen.add((span.start, span.end))
                unique.append(span)
        return unique

    def _span_surface(self, text: str, spans_chars, cores, span: _Span) -> str:
        start = spans_chars[span.start][0] + cores[span.start][1]
        end = spans_chars[span.end - 1][0] + cores[span.end - 1][2]
        return text[start:end]

    def _wh_word(self, span: _Span, surface: str) -> str:
        if span.kind == "year" or _YEAR_RE.match(surface.strip()):
            return "when"
        if span.kind == "subject":
            return "who"
        if span.kind == "entity":
            if span.entity_type == "PERSON":
                return "who"
            if span.entity_type in _WHERE_TYPES:
                return "where"
            return "what"
        return "what"

    def _render_question(
        self, word_list: list[str], s_start: int, s_end: int, span: _Span, wh: str
    ) -> str:
        out: list[str] = []
        for i in range(s_start, s_end):
            if i == span.start:
                out.append(wh)
            elif span.start < i < span.end:
                continue
            else:
                out.append(word_list[i])
        question = " ".join(out)
        question = question.rstrip(".?!,;: ")
        return question.lower()

    def _overlaps(self, span: _Span, other: tuple[int, int]) -> bool:
        return span.start < other[1] and other[0] < span.end

    # -- public entry points ------------------------------------------------

    def generate(self, request: GenerationRequest) -> SyntheticExample | None:
        if request.conditioning_entity is not None:
            return self.generate_conditioned(request)
        return self.generate_unconditioned(request)

    def generate_conditioned(self, request: GenerationRequest) -> SyntheticExample | None:
        passage = request.passage
        mention = request.conditioning_entity
        if mention is None:
            raise GenerationError("conditioned generation needs a conditioning entity")
        text = passage.text
        word_list = split_words(text)
        spans_chars = word_char_spans(text)
        cores = [strip_word(w) for w in word_list]

        target = self._locate(mention, text, word_list, cores)
        if target is None:
            raise GenerationError(
                f"entity {mention.surface!r} does not occur in passage {passage.id!r}"
            )
        sentences = split_sentences(word_list)
        s_start, s_end = self._sentence_of(sentences, target[0])
        mentions = [
            m for m in self.mention_backend.recognize(text)
            if not self._overlaps(_Span(*m.word_span, "entity"), target)
        ]
        candidates = [
            span
            for span in self._candidate_spans(text, word_list, cores, s_start, s_end, mentions)
            if not self._overlaps(span, target)
        ]
        if not candidates:
            return None
        chosen = self._pick_conditioned(candidates, target)
        if chosen is None:
            return None
        surface = self._span_surface(text, spans_chars, cores, chosen)
        wh = self._wh_word(chosen, surface)
        question = self._render_question(word_list, s_start, s_end, chosen, wh)
        if mention.surface.lower() not in question and mention.surface.lower() != surface.lower():
            # end-of-sentence punctuation stripping can mangle rare surfaces
            return None
        located = EntityMention(
            surface=text[
                spans_chars[target[0]][0] + cores[target[0]][1] :
                spans_chars[target[1] - 1][0] + cores[target[1] - 1][2]
            ],
            entity_type=mention.entity_type,
            char_span=(
                spans_chars[target[0]][0] + cores[target[0]][1],
                spans_chars[target[1] - 1][0] + cores[target[1] - 1][2],
            ),
            word_span=target,
        )
        return SyntheticExample(
            question=question,
            answer=surface,
            passage_id=passage.id,
            conditioning_entity=located,
            provenance=PROVENANCE_CONDITIONED,
        )

    def generate_unconditioned(self, request: GenerationRequest) -> SyntheticExample | None:
        passage = request.passage
        if not passage.text.strip():
            raise GenerationError(f"passage {passage.id!r} is empty")
        text = passage.text
        word_list = split_words(text)
        spans_chars = word_char_spans(text)
        cores = [strip_word(w) for w in word_list]
        sentences = split_sentences(word_list)
        rng = random.Random(derive_seed(request.sampling.seed, passage.id))
        s_start, s_end = sentences[rng.randrange(len(sentences))]
        mentions = self.mention_backend.recognize(text)
        candidates = self._candidate_spans(text, word_list, cores, s_start, s_end, mentions)
        if not candidates:
            return None
        chosen = candidates[rng.randrange(len(candidates))]
        surface = self._span_surface(text, spans_chars, cores, chosen)
        wh = self._wh_word(chosen, surface)
        question = self._render_question(word_list, s_start, s_end, chosen, wh)
        return SyntheticExample(
            question=question,
            answer=surface,
            passage_id=passage.id,
            conditioning_entity=None,
            provenance=PROVENANCE_UNCONDITIONED,
        )

    def _pick_conditioned(self, candidates: list[_Span], target: tuple[int, int]) -> _Span | None:
        subjects = [s for s in candidates if s.kind == "subject"]
        if subjects:
            return subjects[0]
        entities = [s for s in candidates if s.kind == "entity"]
        if entities:
            return min(entities, key=lambda s: (abs(s.start - target[0]), s.start))
        rest = [s for s in candidates if s.kind in ("capitalized", "year")]
        if rest:
            return rest[0]
        return None

    def _locate(
        self, mention: EntityMention, text: str, word_list: list[str], cores
    ) -> tuple[int, int] | None:
        """Word span of the mention in this text, trusting its span if valid."""
        ws, we = mention.word_span
        if 0 <= ws < we <= len(word_list):
            window = " ".join(cores[i][0].lower() for i in range(ws, we))
            wanted = " ".join(strip_word(w)[0].lower() for w in split_words(mention.surface))
            if window == wanted:
                return ws, we
        needle = [strip_word(w)[0].lower() for w in split_words(mention.surface)]
        needle = [t for t in needle if t]
        if not needle:
            return None
        haystack = [c[0].lower() for c in cores]
        for i in range(len(haystack) - len(needle) + 1):
            if haystack[i : i + len(needle)] == needle:
                return i, i + len(needle)
        return None


# ---------------------------------------------------------------------------
# External backend
# ---------------------------------------------------------------------------

class ExternalGenerator:
    """Adapter for a spawned generator speaking the line-JSON protocol.

    Request: {"passage", "entity"|null, "top_p", "top_k", "temperature",
    "seed"}; response: {"question", "answer"}.  A conditioned response that
    drops the entity is rejected (returns None), not an error; an answer
    that never occurs in the passage is a GenerationError, since every
    downstream consumer assumes extractive answers.
    """

    def __init__(self, transport: LineJsonBackend):
        self.transport = transport

    def generate(self, request: GenerationRequest) -> SyntheticExample | None:
        mention = request.conditioning_entity
        if mention is not None and mention.surface.lower() not in request.passage.text.lower():
            raise GenerationError(
                f"entity {mention.surface!r} does not occur in passage {request.passage.id!r}"
            )
        payload = {
            "passage": request.passage.text,
            "entity": mention.surface if mention else None,
            "top_p": request.sampling.top_p,
            "top_k": request.sampling.top_k,
            "temperature": request.sampling.temperature,
            "seed": request.sampling.seed,
        }
        response = self.transport.request(payload)
        question = response.get("question")
        answer = response.get("answer")
        if not isinstance(question, str) or not question.strip():
            raise ProtocolError("generator response missing 'question'", line=json.dumps(response)[:200])
        if not isinstance(answer, str) or not answer.strip():
            raise ProtocolError("generator response missing 'answer'", line=json.dumps(response)[:200])
        # answers must be extractive; an answer the passage never mentions
        # would poison every downstream filter and training quad
        if not answer_occurs(request.passage.text, answer):
            raise GenerationError(
                f"generator answered {answer!r}, which does not occur in "
                f"passage {request.passage.id!r}"
            )
        if mention is not None:
            surface = mention.surface.lower()
            if surface not in question.lower() and surface not in answer.lower():
                return None  # rejected: conditioning entity absent from output
        return SyntheticExample(
            question=question,
            answer=answer,
            passage_id=request.passage.id,
            conditioning_entity=mention,
            provenance=(
                PROVENANCE_CONDITIONED if mention is not None else PROVENANCE_UNCONDITIONED
            ),
        )

    generate_conditioned = generate
    generate_unconditioned = generate


# ---------------------------------------------------------------------------
# Training quadruples
# ---------------------------------------------------------------------------

def default_chunker(question: str) -> list[str]:
    """Maximal runs of non-stopword words, in original casing."""
    word_list = split_words(question)
    spans_chars = word_char_spans(question)
    cores = [strip_word(w) for w in word_list]
    chunks: list[str] = []
    i = 0
    n = len(word_list)
    while i < n:
        core = cores[i][0]
        if not core or core.lower() in STOPWORDS:
            i += 1
            continue
        j = i
        while j < n and cores[j][0] and cores[j][0].lower() not in STOPWORDS:
            j += 1
        start = spans_chars[i][0] + cores[i][1]
        end = spans_chars[j - 1][0] + cores[j - 1][2]
        chunks.append(question[start:end])
        i = j
    return chunks


def build_training_quads(
    gold: Sequence[GoldExample],
    passages: dict[str, Passage],
    chunker: Callable[[str], list[str]] = default_chunker,
) -> list[TrainingQuad]:
    """One quad per question chunk that also occurs in the positive passage.

    Occurrence is a contiguous, case-insensitive word-core match, so
    "Efficiency Movement" in the question matches "efficiency movement."
    in the passage.  Gold items whose passage is missing or whose chunks
    all miss are dropped.
    """
    quads: list[TrainingQuad] = []
    passage_tokens: dict[str, list[str]] = {}
    for ex in gold:
        passage = passages.get(ex.positive_passage_id)
        if passage is None or not ex.answers:
            continue
        if passage.id not in passage_tokens:
            passage_tokens[passage.id] = [
                strip_word(w)[0].lower() for w in split_words(passage.text)
            ]
        ptoks = passage_tokens[passage.id]
        for chunk in chunker(ex.question):
            needle = [strip_word(w)[0].lower() for w in split_words(chunk)]
            needle = [t for t in needle if t]
            if needle and contains_sublist(ptoks, needle):
                quads.append(
                    TrainingQuad(
                        question=ex.question,
                        conditioning_entity=chunk,
                        passage_id=passage.id,
                        answer=ex.answers[0],
                    )
                )
    return quads


# ---------------------------------------------------------------------------
# Attention-conditioned scoring probe
# ---------------------------------------------------------------------------

def score_probe(
    model: DualEncoderModel,
    passages: Sequence[Passage],
    vocab: Vocabulary,
    mentions_by_passage: dict[str, Sequence[EntityMention]],
    generator=None,
    sampling: SamplingParams | None = None,
    max_len: int | None = None,
) -> dict:
    """Compare question scores conditioned on extreme-attention entities.

    For each passage with at least two scored entities, generate one
    question conditioned on the highest- and one on the lowest-attended
    entity and score each against the passage with the current model.
    Passages that cannot produce both questions are skipped and counted.
    The per-passage log contains everything needed to recompute the means.
    """
    generator = generator or TemplateGenerator()
    sampling = sampling or SamplingParams()
    max_len = max_len or model.config.max_len
    log: list[dict] = []
    skipped = 0
    for passage in passages:
        mentions = list(mentions_by_passage.get(passage.id, ()))
        tokens = tokenize(vocab, passage.text, max_len)
        profile = extract_profile(model, tokens, passage.id)
        scored = entity_attention(profile, mentions)
        if len(scored) < 2:
            skipped += 1
            continue
        top = highest_attended(scored, 1)[0]
        bottom = lowest_attended(scored, 1)[0]
        pair = []
        for target in (top, bottom):
            request = GenerationRequest(
                passage=passage, conditioning_entity=target, sampling=sampling
            )
            pair.append(generator.generate_conditioned(request))
        if pair[0] is None or pair[1] is None:
            skipped += 1
            continue
        p_emb = encode_seq(model, "passage", tokens).embedding
        scores = []
        for example in pair:
            q_tokens = tokenize(vocab, example.question, max_len)
            q_emb = encode_seq(model, "query", q_tokens).embedding
            scores.append(float(q_emb @ p_emb))
        log.append(
            {
                "passage_id": passage.id,
                "highest_entity": top.surface,
                "highest_question": pair[0].question,
                "highest_score": scores[0],
                "lowest_entity": bottom.surface,
                "lowest_question": pair[1].question,
                "lowest_score": scores[1],
            }
        )
    n = len(log)
    return {
        "passages_scored": n,
        "passages_skipped": skipped,
        "mean_score_highest_entity_q": (
            sum(e["highest_score"] for e in log) / n if n else float("nan")
        ),
        "mean_score_lowest_entity_q": (
            sum(e["lowest_score"] for e in log) / n if n else float("nan")
        ),
        "log": log,
    }
