"""CLS-row attention analysis.

A profile is the final-layer attention row where the CLS position is the
query, averaged over heads, together with its aggregation onto whole words.
Everything downstream (entity masses, entropy, sentence and positional
statistics) is arithmetic over that one vector, so the invariants are
conservation laws: word attention plus special-token attention is the whole
row, and every entity mass re-sums exactly from the raw pieces.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import DualEncoderModel, encode
from .ner import EntityMention
from .textnorm import split_sentences, words
from .tokenizer import TokenSequence


@dataclass
class AttentionProfile:
    passage_id: str
    words: list[str]  # covered words only; truncation can cut the tail
    piece_attention: np.ndarray  # full row over pieces, specials included
    word_attention: np.ndarray  # len(words), exact piece sums
    special_mask: list[bool]
    word_index: list[int]
    total_words: int  # word count of the untruncated passage text
    truncated: bool
    # From the original (cased) text; tokenized words may be lowercased,
    # which defeats capitalization-based sentence detection.
    sentence_boundaries: list[tuple[int, int]] | None = None

    @property
    def covered_words(self) -> int:
        return len(self.words)

    @property
    def special_attention(self) -> float:
        return float(sum(a for a, s in zip(self.piece_attention, self.special_mask) if s))


@dataclass
class EntityAttention:
    mention: EntityMention
    mass: float
    length_normalized: float


def extract_profile(
    model: DualEncoderModel,
    tokens: TokenSequence,
    passage_id: str = "",
    layer: int = -1,
    head: int | None = None,
    source_text: str | None = None,
) -> AttentionProfile:
    """Head-averaged CLS-row attention for one passage.

    ``layer`` and ``head`` are debug knobs; the defaults (final layer, mean
    over heads) are what every analysis in this package uses.  Pass the
    original passage as ``source_text`` to get sentence boundaries; the
    tokenizer lowercases, which hides sentence starts.
    """
    out = encode(model, "passage", tokens)
    stack = out.attentions[layer]  # (H, S, S)
    row = stack[head, 0, :] if head is not None else stack[:, 0, :].mean(axis=0)
    row = np.asarray(row, dtype=np.float64)
    covered = tokens.covered_words
    word_attention = np.zeros(covered, dtype=np.float64)
    for pos, w in enumerate(tokens.word_index):
        if w >= 0:
            word_attention[w] += row[pos]
    boundaries = None
    if source_text is not None:
        source_words = words(source_text)
        if len(source_words) != len(tokens.words):
            raise ValueError(
                f"passage {passage_id!r}: source_text has {len(source_words)} words "
                f"but the token sequence covers {len(tokens.words)}"
            )
        boundaries = split_sentences(source_words)
    return AttentionProfile(
        passage_id=passage_id,
        words=list(tokens.words[:covered]),
        piece_attention=row,
        word_attention=word_attention,
        special_mask=list(tokens.special_mask),
        word_index=list(tokens.word_index),
        total_words=len(tokens.words),
        truncated=tokens.truncated,
        sentence_boundaries=boundaries,
    )


def entity_attention(
    profile: AttentionProfile, mentions: Sequence[EntityMention]
) -> list[EntityAttention]:
    """Sum word attention over each mention's span.

    Mentions reaching past the covered (untruncated) prefix are dropped;
    mentions outside the passage's word range are an error.
    """
    out: list[EntityAttention] = []
    for mention in mentions:
        start, end = mention.word_span
        if start < 0 or end > profile.total_words or start >= end:
            raise ValueError(
                f"mention {mention.surface!r} word span ({start}, {end}) is outside "
                f"passage {profile.passage_id!r} with {profile.total_words} words"
            )
        if end > profile.covered_words:
            continue  # lost to truncation
        mass = float(profile.word_attention[start:end].sum())
        out.append(
            EntityAttention(mention=mention, mass=mass, length_normalized=mass / (end - start))
        )
    return out


def _rank_key(ea: EntityAttention, normalized: bool):
    value = ea.length_normalized if normalized else ea.mass
    return (value, ea.mention.word_span[0], ea.mention.surface)


def lowest_attended(
    entities: Sequence[EntityAttention], k: int, normalized: bool = False
) -> list[EntityMention]:
    """The k least-attended mentions, ascending; ties go to earlier spans."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(entities, key=lambda ea: _rank_key(ea, normalized))
    return [ea.mention for ea in ranked[:k]]


def highest_attended(
    entities: Sequence[EntityAttention], k: int, normalized: bool = False
) -> list[EntityMention]:
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(
        entities,
        key=lambda ea: (
            -(ea.length_normalized if normalized else ea.mass),
            ea.mention.word_span[0],
            ea.mention.surface,
        ),
    )
    return [ea.mention for ea in ranked[:k]]


def attention_entropy(profile: AttentionProfile) -> float:
    """Entropy (natural log) of the row renormalized over non-special pieces."""
    values = np.asarray(
        [a for a, s in zip(profile.piece_attention, profile.special_mask) if not s],
        dtype=np.float64,
    )
    if values.size == 0:
        raise ValueError(f"passage {profile.passage_id!r} has no non-special pieces")
    total = values.sum()
    if total <= 0.0:
        raise ValueError(f"passage {profile.passage_id!r} has all-zero non-special attention")
    p = values / total
    nz = p[p > 0]
    # + 0.0 turns the -0.0 of a one-hot row into a plain 0.0
    return float(-(nz * np.log(nz)).sum()) + 0.0


def first_sentence_gap(
    profile: AttentionProfile,
    sentence_boundaries: Sequence[tuple[int, int]] | None = None,
) -> tuple[float, float]:
    """Mean word attention in the first sentence vs all later words.

    Single-sentence passages are an error; callers exclude them.
    """
    if sentence_boundaries is None:
        sentence_boundaries = profile.sentence_boundaries
    if sentence_boundaries is None:
        sentence_boundaries = split_sentences(profile.words)
    if len(sentence_boundaries) < 2:
        raise ValueError(
            f"passage {profile.passage_id!r} has {len(sentence_boundaries)} sentence(s); "
            "the first-vs-rest comparison needs at least 2"
        )
    first_start, first_end = sentence_boundaries[0]
    first = profile.word_attention[first_start:first_end]
    rest = profile.word_attention[first_end : profile.covered_words]
    if first.size == 0 or rest.size == 0:
        raise ValueError(f"passage {profile.passage_id!r}: empty sentence split")
    return float(first.mean()), float(rest.mean())


def rest_attention_share(
    profile: AttentionProfile,
    sentence_boundaries: Sequence[tuple[int, int]] | None = None,
) -> float:
    """Fraction of total word attention falling after the first sentence.

    Single-sentence passages are an error, as in ``first_sentence_gap``.
    """
    if sentence_boundaries is None:
        sentence_boundaries = profile.sentence_boundaries
    if sentence_boundaries is None:
        sentence_boundaries = split_sentences(profile.words)
    if len(sentence_boundaries) < 2:
        raise ValueError(
            f"passage {profile.passage_id!r} has {len(sentence_boundaries)} sentence(s); "
            "the rest-share needs at least 2"
        )
    total = float(profile.word_attention.sum())
    if total <= 0.0:
        raise ValueError(f"passage {profile.passage_id!r} carries no word attention")
    first_end = sentence_boundaries[0][1]
    return float(profile.word_attention[first_end : profile.covered_words].sum()) / total


def positional_stats(
    profiles_with_entities: Iterable[tuple[AttentionProfile, Sequence[EntityAttention]]],
) -> dict[str, float]:
    """Where the extreme-attention entities sit, over many passages.

    A span belongs to the second half when its start word index is at least
    ceil(word_count / 2).  Passages with no scored entities are skipped.
    """
    n = 0
    highest_first = 0
    lowest_second = 0
    for profile, entities in profiles_with_entities:
        if not entities:
            continue
        n += 1
        midpoint = -(-profile.total_words // 2)
        top = highest_attended(entities, 1)[0]
        bottom = lowest_attended(entities, 1)[0]
        if top.word_span[0] < midpoint:
            highest_first += 1
        if bottom.word_span[0] >= midpoint:
            lowest_second += 1
    if n == 0:
        return {
            "passages": 0,
            "frac_highest_in_first_half": float("nan"),
            "frac_lowest_in_second_half": float("nan"),
        }
    return {
        "passages": n,
        "frac_highest_in_first_half": highest_first / n,
        "frac_lowest_in_second_half": lowest_second / n,
    }


def heatmap_data(profile: AttentionProfile) -> list[tuple[str, float]]:
    return [
        (word, float(att)) for word, att in zip(profile.words, profile.word_attention)
    ]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class ProfileSummary:
    """One passage's analysis bundle, ready for serialization."""

    profile: AttentionProfile
    entities: list[EntityAttention] = field(default_factory=list)

    def to_dict(self) -> dict:
        entropy = attention_entropy(self.profile)
        try:
            first_mean, rest_mean = first_sentence_gap(self.profile)
        except ValueError:
            first_mean = rest_mean = None
        return {
            "passage_id": self.profile.passage_id,
            "entropy": entropy,
            "first_sentence_mean": first_mean,
            "rest_mean": rest_mean,
            "truncated": self.profile.truncated,
            "special_attention": self.profile.special_attention,
            "entities": [
                {
                    "surface": ea.mention.surface,
                    "type": ea.mention.entity_type,
                    "word_start": ea.mention.word_span[0],
                    "word_end": ea.mention.word_span[1],
                    "mass": ea.mass,
                    "length_normalized": ea.length_normalized,
                }
                for ea in self.entities
            ],
        }


def aggregate_stats(summaries: Sequence[ProfileSummary]) -> dict:
    """Corpus-level means used by the model comparison report."""
    entropies = []
    firsts = []
    rests = []
    shares = []
    for s in summaries:
        entropies.append(attention_entropy(s.profile))
        try:
            f, r = first_sentence_gap(s.profile)
            share = rest_attention_share(s.profile)
        except ValueError:
            continue
        firsts.append(f)
        rests.append(r)
        shares.append(share)
    positional = positional_stats((s.profile, s.entities) for s in summaries)
    return {
        "passages": len(summaries),
        "mean_entropy": float(np.mean(entropies)) if entropies else float("nan"),
        "multi_sentence_passages": len(firsts),
        "mean_first_sentence_attention": float(np.mean(firsts)) if firsts else float("nan"),
        "mean_rest_attention": float(np.mean(rests)) if rests else float("nan"),
        "mean_rest_share": float(np.mean(shares)) if shares else float("nan"),
        "positional": positional,
    }


def write_attention_report(path: str | Path, summaries: Sequence[ProfileSummary]) -> None:
    report = {
        "aggregate": aggregate_stats(summaries),
        "passages": [s.to_dict() for s in summaries],
    }
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8"
    )


def write_heatmap_csv(path: str | Path, profiles: Sequence[AttentionProfile]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["passage_id", "word_pos", "word", "attention"])
        for profile in profiles:
            for pos, (word, att) in enumerate(heatmap_data(profile)):
                writer.writerow([profile.passage_id, pos, word, repr(att)])


def load_heatmap_csv(path: str | Path) -> list[tuple[str, int, str, float]]:
    rows: list[tuple[str, int, str, float]] = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["passage_id", "word_pos", "word", "attention"]:
            raise ValueError(f"{path}: unexpected heatmap header {header}")
        for row in reader:
            rows.append((row[0], int(row[1]), row[2], float(row[3])))
    return rows
