"""Quality and hardness filtering of synthetic examples, plus dataset mixing.

Stage order is fixed: a reading-comprehension consistency check first,
then a retrieval-hardness cut on what survived.  Both stages populate the
score they used, so a filter report (and any audit) can recompute every
decision from the retained examples alone.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Passage
from .encoder import DualEncoderModel, encode_many
from .errors import ProtocolError
from .protocol import LineJsonBackend
from .qgen import SyntheticExample
from .textnorm import answer_occurs, content_words
from .tokenizer import Vocabulary, encode as tokenize

STAGE_ORDER = ("mrc", "hardness")


@dataclass
class FilterConfig:
    mrc_threshold: float = 0.5
    hardness_mode: str = "percentile"
    hardness_threshold: float = 50.0
    mix_ratio: float = 0.5
    target_size: int = 0

    def __post_init__(self):
        if not (0.0 <= self.mrc_threshold <= 1.0):
            raise ValueError(f"mrc_threshold must be in [0, 1], got {self.mrc_threshold}")
        if self.hardness_mode not in ("absolute", "percentile"):
            raise ValueError(
                f"hardness_mode must be absolute or percentile, got {self.hardness_mode!r}"
            )
        if self.hardness_mode == "percentile" and not (0.0 <= self.hardness_threshold <= 100.0):
            raise ValueError(
                f"percentile hardness_threshold must be in [0, 100], got {self.hardness_threshold}"
            )
        if not (0.0 <= self.mix_ratio <= 1.0):
            raise ValueError(f"mix_ratio must be in [0, 1], got {self.mix_ratio}")
        if self.target_size < 0:
            raise ValueError(f"target_size must be >= 0, got {self.target_size}")


# ---------------------------------------------------------------------------
# Readers
# ---------------------------------------------------------------------------

class LexicalReader:
    """Answerability score without a trained reader.

    0 when the normalized answer never occurs in the passage; otherwise the
    harmonic mean of the presence indicator (1) and the fraction of the
    question's distinct content words found in the passage, i.e. 2v/(1+v).
    """

    def score(self, question: str, passage_text: str, answer: str) -> float:
        if not answer_occurs(passage_text, answer):
            return 0.0
        q_words = set(content_words(question))
        if not q_words:
            return 0.0
        p_words = set(content_words(passage_text))
        v = len(q_words & p_words) / len(q_words)
        if v == 0.0:
            return 0.0
        return 2.0 * v / (1.0 + v)


class ExternalReader:
    """Adapter for a spawned reader speaking the line-JSON protocol.

    Request: {"question", "passage", "answer"}; response: {"score": real}.
    """

    def __init__(self, transport: LineJsonBackend):
        self.transport = transport

    def score(self, question: str, passage_text: str, answer: str) -> float:
        response = self.transport.request(
            {"question": question, "passage": passage_text, "answer": answer}
        )
        value = response.get("score")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ProtocolError(
                "reader response missing numeric 'score'", line=json.dumps(response)[:200]
            )
        return float(value)


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def mrc_consistency_filter(
    examples: Sequence[SyntheticExample],
    passages: dict[str, Passage],
    mrc_threshold: float,
    reader=None,
) -> list[SyntheticExample]:
    """Keep examples whose reader score reaches the threshold.

    Scores are written onto every input example, retained or not, so the
    report histograms cover the full batch.
    """
    reader = reader or LexicalReader()
    retained = []
    for ex in examples:
        passage = passages.get(ex.passage_id)
        if passage is None:
            raise ValueError(f"example references unknown passage {ex.passage_id!r}")
        ex.mrc_score = float(reader.score(ex.question, passage.text, ex.answer))
        if ex.mrc_score >= mrc_threshold:
            retained.append(ex)
    return retained


def score_retrieval(
    examples: Sequence[SyntheticExample],
    model: DualEncoderModel,
    vocab: Vocabulary,
    passages: dict[str, Passage],
    batch_size: int = 32,
    workers: int | None = None,
) -> np.ndarray:
    """Dot-product score of each example's question against its own passage."""
    max_len = model.config.max_len
    pids = sorted({ex.passage_id for ex in examples})
    for pid in pids:
        if pid not in passages:
            raise ValueError(f"example references unknown passage {pid!r}")
    p_tokens = [tokenize(vocab, passages[pid].text, max_len) for pid in pids]
    p_emb = encode_many(model, "passage", p_tokens, batch_size, workers)
    row_of = {pid: i for i, pid in enumerate(pids)}
    q_tokens = [tokenize(vocab, ex.question, max_len) for ex in examples]
    q_emb = encode_many(model, "query", q_tokens, batch_size, workers)
    rows = np.array([row_of[ex.passage_id] for ex in examples], dtype=np.int64)
    return np.einsum("nd,nd->n", q_emb, p_emb[rows])


def hardness_filter(
    examples: Sequence[SyntheticExample],
    model: DualEncoderModel,
    vocab: Vocabulary,
    passages: dict[str, Passage],
    config: FilterConfig,
    batch_size: int = 32,
    workers: int | None = None,
) -> list[SyntheticExample]:
    """Keep the low-scoring (hard) examples.

    Absolute mode keeps scores <= threshold.  Percentile mode keeps the
    floor(p/100 * n) lowest-scoring examples of this batch (ties broken by
    input position), so 0 keeps nothing, 100 keeps everything, and the
    retained set grows with p.  Input order is preserved either way.
    """
    if not examples:
        return []
    scores = score_retrieval(examples, model, vocab, passages, batch_size, workers)
    for ex, s in zip(examples, scores):
        ex.retrieval_score = float(s)
    if config.hardness_mode == "absolute":
        return [ex for ex in examples if ex.retrieval_score <= config.hardness_threshold]
    n = len(examples)
    m = int(math.floor(config.hardness_threshold / 100.0 * n))
    keep = set(sorted(range(n), key=lambda i: (scores[i], i))[:m])
    return [ex for i, ex in enumerate(examples) if i in keep]


def mix_datasets(
    conditioned: Sequence[SyntheticExample],
    unconditioned: Sequence[SyntheticExample],
    mix_ratio: float,
    target_size: int,
    seed: int,
) -> list[SyntheticExample]:
    """Sample round(ratio * target) conditioned plus the rest unconditioned.

    Sampling is without replacement and the merged result is shuffled, all
    under one seeded generator.  A pool too small for its quota is an error
    naming the pool.
    """
    n_cond = int(math.floor(mix_ratio * target_size + 0.5))
    n_unc = target_size - n_cond
    if len(conditioned) < n_cond:
        raise ValueError(
            f"conditioned pool has {len(conditioned)} examples, need {n_cond}"
        )
    if len(unconditioned) < n_unc:
        raise ValueError(
            f"unconditioned pool has {len(unconditioned)} examples, need {n_unc}"
        )
    rng = random.Random(seed)
    mixed = [conditioned[i] for i in rng.sample(range(len(conditioned)), n_cond)]
    mixed += [unconditioned[i] for i in rng.sample(range(len(unconditioned)), n_unc)]
    rng.shuffle(mixed)
    return mixed


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _histogram(values: Sequence[float], bins: int = 20) -> dict:
    if not values:
        return {"bin_edges": [], "counts": []}
    arr = np.asarray(values, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        hi = lo + 1.0  # single-valued batch still gets a well-formed histogram
    counts, edges = np.histogram(arr, bins=bins, range=(lo, hi))
    return {"bin_edges": [float(e) for e in edges], "counts": [int(c) for c in counts]}


def filter_report(
    input_count: int,
    mrc_scores: Sequence[float],
    retained_after_mrc: int,
    hardness_scores: Sequence[float],
    retained_after_hardness: int,
    config: FilterConfig,
) -> dict:
    return {
        "input": input_count,
        "stage_order": list(STAGE_ORDER),
        "stages": [
            {
                "name": "mrc",
                "threshold": config.mrc_threshold,
                "scored": len(mrc_scores),
                "retained": retained_after_mrc,
                "histogram": _histogram(mrc_scores),
            },
            {
                "name": "hardness",
                "mode": config.hardness_mode,
                "threshold": config.hardness_threshold,
                "scored": len(hardness_scores),
                "retained": retained_after_hardness,
                "histogram": _histogram(hardness_scores),
            },
        ],
    }


def run_filter_pipeline(
    examples: Sequence[SyntheticExample],
    passages: dict[str, Passage],
    model: DualEncoderModel,
    vocab: Vocabulary,
    config: FilterConfig,
    reader=None,
    batch_size: int = 32,
    workers: int | None = None,
) -> tuple[list[SyntheticExample], dict]:
    """Both stages in their fixed order, plus the report."""
    after_mrc = mrc_consistency_filter(examples, passages, config.mrc_threshold, reader)
    after_hard = hardness_filter(
        after_mrc, model, vocab, passages, config, batch_size, workers
    )
    report = filter_report(
        input_count=len(examples),
        mrc_scores=[ex.mrc_score for ex in examples if ex.mrc_score is not None],
        retained_after_mrc=len(after_mrc),
        hardness_scores=[ex.retrieval_score for ex in after_mrc if ex.retrieval_score is not None],
        retained_after_hardness=len(after_hard),
        config=config,
    )
    return after_hard, report


def write_filter_report(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
