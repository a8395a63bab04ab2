"""Retrieval evaluation and model comparison.

Accuracy here is top-k answer recall: the percentage of questions whose
top-k retrieved passages contain at least one gold answer as a contiguous
token run.  Comparison reports bundle those accuracies (on the full test
set and both overlap-controlled subsets) with the attention statistics,
since the point of the whole exercise is to see both move together.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attention import ProfileSummary, aggregate_stats, entity_attention, extract_profile
from .corpus import GoldExample, OverlapSplit, Passage
from .encoder import DualEncoderModel, encode_many
from .errors import EvalError
from .lexical import RankedList
from .ner import EntityMention
from .textnorm import answer_occurs
from .tokenizer import Vocabulary, encode as tokenize

DEFAULT_KS = (1, 5)
SUBSET_FULL = "full"


def answer_match(passage_text: str, answers: Sequence[str]) -> bool:
    """True iff any normalized answer occurs as a token run in the passage.

    Matching is at token granularity: answer "paris" does not match a
    passage containing only "parisian".
    """
    return any(answer_occurs(passage_text, answer) for answer in answers)


def topk_accuracy(
    runs: dict[str, RankedList],
    gold: Sequence[GoldExample],
    ks: Iterable[int],
    passages: dict[str, Passage],
) -> dict[int, float]:
    """Per-k percentage of questions answered within the top k results."""
    ks = sorted(set(ks))
    if not gold:
        return {k: float("nan") for k in ks}
    missing = [ex.qid for ex in gold if ex.qid not in runs]
    if missing:
        raise EvalError(f"no retrieval run for question ids: {', '.join(missing)}")
    max_k = max(ks)
    hit_ranks: list[int | None] = []
    for ex in gold:
        entries = runs[ex.qid].entries[:max_k]
        rank = None
        for i, (pid, _score) in enumerate(entries, start=1):
            passage = passages.get(pid)
            if passage is None:
                raise EvalError(f"run for {ex.qid} references unknown passage {pid!r}")
            if answer_match(passage.text, ex.answers):
                rank = i
                break
        hit_ranks.append(rank)
    return {
        k: 100.0 * sum(1 for r in hit_ranks if r is not None and r <= k) / len(gold)
        for k in ks
    }


def retrieve_dense(
    model: DualEncoderModel,
    questions: Sequence[tuple[str, str]],
    passages: Sequence[Passage],
    k: int,
    vocab: Vocabulary,
    batch_size: int = 32,
    workers: int | None = None,
) -> dict[str, RankedList]:
    """Exhaustive dot-product retrieval; ties broken by passage id.

    ``questions`` are (question_id, text) pairs.  Chunked encoding makes
    the result independent of batch partitioning.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    ordered = sorted(passages, key=lambda p: p.id)
    max_len = model.config.max_len
    p_tokens = [tokenize(vocab, p.text, max_len) for p in ordered]
    p_emb = encode_many(model, "passage", p_tokens, batch_size, workers)
    q_tokens = [tokenize(vocab, text, max_len) for _qid, text in questions]
    q_emb = encode_many(model, "query", q_tokens, batch_size, workers)
    pid_arr = np.array([p.id for p in ordered])
    scores = q_emb @ p_emb.T if len(questions) else np.zeros((0, len(ordered)))
    runs: dict[str, RankedList] = {}
    for row, (qid, _text) in enumerate(questions):
        # lexsort uses the last key as primary: sort by -score, then pid
        order = np.lexsort((pid_arr, -scores[row]))[:k]
        entries = [(str(pid_arr[i]), float(scores[row, i])) for i in order]
        runs[qid] = RankedList(query_id=qid, entries=entries)
    return runs


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    model_tag: str
    ks: list[int]
    accuracies: dict[str, dict[int, float]]  # subset -> k -> percent
    question_counts: dict[str, int]
    attention: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model": self.model_tag,
            "ks": self.ks,
            "accuracies": {
                subset: {str(k): v for k, v in table.items()}
                for subset, table in self.accuracies.items()
            },
            "question_counts": dict(self.question_counts),
            "attention": self.attention,
        }


def evaluate_model(
    model: DualEncoderModel,
    tag: str,
    passages: Sequence[Passage],
    gold: Sequence[GoldExample],
    vocab: Vocabulary,
    split: OverlapSplit | None = None,
    ks: Iterable[int] = DEFAULT_KS,
    mentions_by_passage: dict[str, Sequence[EntityMention]] | None = None,
    attention_sample: Sequence[Passage] | None = None,
    batch_size: int = 32,
    workers: int | None = None,
) -> tuple[EvalReport, list[ProfileSummary], dict[str, RankedList]]:
    """Retrieval accuracies on every subset plus attention statistics.

    ``attention_sample`` defaults to the full passage list; pass a subset
    to bound profile extraction cost on large corpora.
    """
    ks = sorted(set(ks))
    passage_map = {p.id: p for p in passages}
    runs = retrieve_dense(
        model, [(ex.qid, ex.question) for ex in gold], passages, max(ks), vocab,
        batch_size, workers,
    )
    subsets: dict[str, Sequence[GoldExample]] = {SUBSET_FULL: gold}
    if split is not None:
        for name in ("no_answer_overlap", "no_question_overlap"):
            ids = split.subset_ids(name)
            subsets[name] = [ex for ex in gold if ex.qid in ids]
    accuracies = {}
    counts = {}
    for name, subset in subsets.items():
        accuracies[name] = topk_accuracy(runs, subset, ks, passage_map)
        counts[name] = len(subset)

    sample = attention_sample if attention_sample is not None else passages
    mentions_by_passage = mentions_by_passage or {}
    summaries: list[ProfileSummary] = []
    for passage in sample:
        tokens = tokenize(vocab, passage.text, model.config.max_len)
        profile = extract_profile(model, tokens, passage.id, source_text=passage.text)
        scored = entity_attention(profile, mentions_by_passage.get(passage.id, ()))
        summaries.append(ProfileSummary(profile=profile, entities=scored))
    report = EvalReport(
        model_tag=tag,
        ks=list(ks),
        accuracies=accuracies,
        question_counts=counts,
        attention=aggregate_stats(summaries),
    )
    return report, summaries, runs


def _delta_table(a: EvalReport, b: EvalReport) -> dict:
    out: dict = {"accuracies": {}, "attention": {}}
    for subset in b.accuracies:
        if subset not in a.accuracies:
            continue
        out["accuracies"][subset] = {
            str(k): b.accuracies[subset][k] - a.accuracies[subset][k]
            for k in b.accuracies[subset]
            if k in a.accuracies[subset]
        }
    for key in (
        "mean_entropy",
        "mean_first_sentence_attention",
        "mean_rest_attention",
        "mean_rest_share",
    ):
        va, vb = a.attention.get(key), b.attention.get(key)
        if isinstance(va, float) and isinstance(vb, float):
            out["attention"][key] = vb - va
    return out


def compare_models(
    tagged_models: Sequence[tuple[str, DualEncoderModel]],
    passages: Sequence[Passage],
    gold: Sequence[GoldExample],
    vocab: Vocabulary,
    split: OverlapSplit | None = None,
    ks: Iterable[int] = DEFAULT_KS,
    mentions_by_passage: dict[str, Sequence[EntityMention]] | None = None,
    attention_sample: Sequence[Passage] | None = None,
    batch_size: int = 32,
    workers: int | None = None,
) -> tuple[dict, dict[str, list[ProfileSummary]], dict[str, dict[str, RankedList]]]:
    """Evaluate each tagged model identically; report pairwise deltas.

    Deltas are later-minus-earlier in the given order, so listing the
    baseline first makes every delta read as the change from baseline.
    Returns (comparison dict, per-model profile dumps, per-model runs).
    """
    if len(tagged_models) < 2:
        raise ValueError("compare_models needs at least 2 models")
    reports: dict[str, EvalReport] = {}
    dumps: dict[str, list[ProfileSummary]] = {}
    runs_by_tag: dict[str, dict[str, RankedList]] = {}
    for tag, model in tagged_models:
        report, summaries, runs = evaluate_model(
            model, tag, passages, gold, vocab, split, ks, mentions_by_passage,
            attention_sample, batch_size, workers,
        )
        reports[tag] = report
        dumps[tag] = summaries
        runs_by_tag[tag] = runs
    tags = [tag for tag, _ in tagged_models]
    deltas = {}
    for i, tag_a in enumerate(tags):
        for tag_b in tags[i + 1 :]:
            deltas[f"{tag_b}_minus_{tag_a}"] = _delta_table(reports[tag_a], reports[tag_b])
    comparison = {
        "ks": sorted(set(ks)),
        "model_order": tags,
        "models": {tag: reports[tag].to_dict() for tag in tags},
        "deltas": deltas,
    }
    return comparison, dumps, runs_by_tag


def write_report_json(path: str | Path, report: dict) -> None:
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2, allow_nan=True) + "\n",
        encoding="utf-8",
    )


def write_report_csv(path: str | Path, comparison: dict) -> None:
    """Flat per-k accuracy rows: model,subset,k,accuracy,questions."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "subset", "k", "accuracy", "questions"])
        for tag in comparison["model_order"]:
            report = comparison["models"][tag]
            for subset in sorted(report["accuracies"]):
                for k in sorted(report["accuracies"][subset], key=int):
                    writer.writerow(
                        [
                            tag,
                            subset,
                            k,
                            repr(report["accuracies"][subset][k]),
                            report["question_counts"][subset],
                        ]
                    )
