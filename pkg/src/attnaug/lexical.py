"""Inverted-index retrieval: BM25 and TF-IDF scoring, search, negative mining.

BM25 uses the Lucene-style idf ``ln(1 + (N - df + 0.5) / (df + 0.5))`` with
defaults k1=0.9, b=0.4.  TF-IDF is the cosine of ltc-weighted vectors
(log tf, idf=ln(N/df), length normalization).  Both share one analyzer
(:func:`attnaug.textnorm.analyze`); query terms absent from the index
contribute nothing to either score.
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from collections import Counter
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import Passage
from .errors import IngestError
from .textnorm import analyze, contains_sublist, normalize_answer_tokens

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4
DEFAULT_NEGATIVE_POOL = 50

INDEX_FORMAT_VERSION = "attnaug-index-v1"


@dataclass
class RankedList:
    """Scored passages for one query, best first; ties broken by passage id."""

    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)

    def passage_ids(self) -> list[str]:
        return [pid for pid, _ in self.entries]


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_length: dict[str, int]
    passage_count: int
    average_doc_length: float
    # Derived, rebuilt on load: ltc vector norms for the TF-IDF cosine.
    tfidf_norms: dict[str, float] = field(default_factory=dict, repr=False)

    def term_frequency(self, term: str, passage_id: str) -> int:
        plist = self.postings.get(term)
        if not plist:
            return 0
        i = bisect_left(plist, (passage_id,))
        if i < len(plist) and plist[i][0] == passage_id:
            return plist[i][1]
        return 0

    def document_frequency(self, term: str) -> int:
        return len(self.postings.get(term, ()))


def build_index(passages: Sequence[Passage]) -> InvertedIndex:
    """Index passages under the shared analyzer.

    Posting lists are sorted by passage id so scoring lookups can bisect and
    so the serialized index is byte-stable.
    """
    if not passages:
        raise IngestError("cannot build an index from an empty passage list")
    doc_length: dict[str, int] = {}
    postings: dict[str, list[tuple[str, int]]] = {}
    for p in passages:
        if p.id in doc_length:
            raise IngestError(f"duplicate passage id {p.id!r}")
        terms = analyze(p.text)
        doc_length[p.id] = len(terms)
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((p.id, tf))
    for plist in postings.values():
        plist.sort()
    n = len(doc_length)
    avg = sum(doc_length.values()) / n
    index = InvertedIndex(
        postings=postings, doc_length=doc_length, passage_count=n, average_doc_length=avg
    )
    index.tfidf_norms = _compute_tfidf_norms(index)
    return index


def _tfidf_idf(index: InvertedIndex, df: int) -> float:
    return math.log(index.passage_count / df)


def _compute_tfidf_norms(index: InvertedIndex) -> dict[str, float]:
    sq: dict[str, float] = {pid: 0.0 for pid in index.doc_length}
    for term, plist in index.postings.items():
        idf = _tfidf_idf(index, len(plist))
        for pid, tf in plist:
            w = (1.0 + math.log(tf)) * idf
            sq[pid] += w * w
    return {pid: math.sqrt(v) for pid, v in sq.items()}


def bm25_idf(index: InvertedIndex, term: str) -> float:
    df = index.document_frequency(term)
    if df == 0:
        return 0.0
    n = index.passage_count
    return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def bm25_score(
    index: InvertedIndex,
    query_terms: Sequence[str],
    passage_id: str,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """BM25 score of one passage against analyzed query terms."""
    if passage_id not in index.doc_length:
        raise KeyError(f"passage {passage_id!r} is not in the index")
    length = index.doc_length[passage_id]
    norm_len = length / index.average_doc_length if index.average_doc_length > 0 else 0.0
    score = 0.0
    for term in query_terms:
        tf = index.term_frequency(term, passage_id)
        if tf == 0:
            continue
        idf = bm25_idf(index, term)
        score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm_len))
    return score


def tfidf_score(index: InvertedIndex, query_terms: Sequence[str], passage_id: str) -> float:
    """Cosine similarity of ltc-weighted query and passage vectors."""
    if passage_id not in index.doc_length:
        raise KeyError(f"passage {passage_id!r} is not in the index")
    q_counts = Counter(query_terms)
    dot = 0.0
    q_sq = 0.0
    for term, q_tf in q_counts.items():
        df = index.document_frequency(term)
        if df == 0:
            continue
        idf = _tfidf_idf(index, df)
        w_q = (1.0 + math.log(q_tf)) * idf
        q_sq += w_q * w_q
        d_tf = index.term_frequency(term, passage_id)
        if d_tf:
            dot += w_q * (1.0 + math.log(d_tf)) * idf
    d_norm = index.tfidf_norms.get(passage_id, 0.0)
    q_norm = math.sqrt(q_sq)
    if q_norm == 0.0 or d_norm == 0.0:
        return 0.0
    return dot / (q_norm * d_norm)


def search(
    index: InvertedIndex,
    query: str,
    k: int,
    scorer: str = "bm25",
    query_id: str = "q0",
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> RankedList:
    """Top-k passages under the chosen scorer.

    Deterministic: scores sort descending, ties break by ascending passage
    id.  Passages matching no query term score 0.0 and pad the tail, so
    fewer than k entries come back only when the corpus itself is smaller.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if scorer not in ("bm25", "tfidf"):
        raise ValueError(f"unknown scorer {scorer!r}")
    query_terms = analyze(query)
    candidates: set[str] = set()
    for term in set(query_terms):
        candidates.update(pid for pid, _ in index.postings.get(term, ()))
    scores: dict[str, float] = {}
    for pid in candidates:
        if scorer == "bm25":
            scores[pid] = bm25_score(index, query_terms, pid, k1=k1, b=b)
        else:
            scores[pid] = tfidf_score(index, query_terms, pid)
    ranked = sorted(
        ((scores.get(pid, 0.0), pid) for pid in index.doc_length),
        key=lambda sp: (-sp[0], sp[1]),
    )
    return RankedList(query_id=query_id, entries=[(pid, s) for s, pid in ranked[:k]])


def mine_hard_negative(
    index: InvertedIndex,
    passages: dict[str, Passage],
    question: str,
    answers: Sequence[str],
    pool_size: int = DEFAULT_NEGATIVE_POOL,
) -> str | None:
    """Highest-BM25 passage in the top ``pool_size`` containing no answer.

    Answer containment uses the normalized token-run rule shared with the
    evaluation harness, so a mined negative can never count as a hit there.
    Returns None when every candidate contains an answer.
    """
    if pool_size < 1:
        raise ValueError(f"pool_size must be >= 1, got {pool_size}")
    run = search(index, question, k=pool_size, scorer="bm25")
    answer_token_lists = [normalize_answer_tokens(a) for a in answers]
    for pid, _score in run.entries:
        passage = passages[pid]
        p_tokens = analyze(passage.text)
        if any(at and contains_sublist(p_tokens, at) for at in answer_token_lists):
            continue
        return pid
    return None


# ---------------------------------------------------------------------------
# Persistence and TREC run emission
# ---------------------------------------------------------------------------

def save_index(index: InvertedIndex, path: str | Path) -> None:
    payload = {
        "version": INDEX_FORMAT_VERSION,
        "passage_count": index.passage_count,
        "average_doc_length": index.average_doc_length,
        "doc_length": index.doc_length,
        "postings": {t: [[pid, tf] for pid, tf in pl] for t, pl in index.postings.items()},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("version")
    if version != INDEX_FORMAT_VERSION:
        raise IngestError(f"unsupported index version {version!r} in {path}")
    index = InvertedIndex(
        postings={t: [(pid, int(tf)) for pid, tf in pl] for t, pl in payload["postings"].items()},
        doc_length={pid: int(n) for pid, n in payload["doc_length"].items()},
        passage_count=int(payload["passage_count"]),
        average_doc_length=float(payload["average_doc_length"]),
    )
    index.tfidf_norms = _compute_tfidf_norms(index)
    return index


def write_trec_run(runs: Iterable[RankedList], path: str | Path, tag: str = "attnaug") -> None:
    """Emit runs in TREC format: ``qid Q0 pid rank score tag``."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for run in runs:
            for rank, (pid, score) in enumerate(run.entries, start=1):
                fh.write(f"{run.query_id} Q0 {pid} {rank} {score:.6f} {tag}\n")
