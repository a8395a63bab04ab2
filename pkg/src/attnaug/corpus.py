"""Corpus ingestion: documents, fixed-size passages, gold data, overlap splits.

The canonical on-disk format for everything in this package is JSONL
(UTF-8, one object per line).  Passage splitting is strictly word-count
based: a "word" is a maximal whitespace-separated token after collapsing
whitespace runs, and blocks may cross sentence boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import IngestError, JsonlError
from .textnorm import analyze, normalize_answer, normalize_ws

DEFAULT_BLOCK_SIZE = 100
DEFAULT_DUP_THRESHOLD = 0.9


@dataclass
class Document:
    id: str
    title: str
    text: str


@dataclass
class Passage:
    id: str
    doc_id: str
    title: str
    text: str
    word_count: int
    position_index: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "doc_id": self.doc_id,
            "title": self.title,
            "text": self.text,
            "word_count": self.word_count,
            "position_index": self.position_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Passage":
        return cls(
            id=str(d["id"]),
            doc_id=str(d["doc_id"]),
            title=d["title"],
            text=d["text"],
            word_count=int(d["word_count"]),
            position_index=int(d["position_index"]),
        )


@dataclass
class GoldExample:
    question: str
    answers: list[str]
    positive_passage_id: str
    negative_passage_ids: list[str] = field(default_factory=list)
    # Derived at load time (stable file order), not part of the wire format.
    qid: str | None = None

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "answers": list(self.answers),
            "positive_passage_id": self.positive_passage_id,
            "negative_passage_ids": list(self.negative_passage_ids),
        }

    @classmethod
    def from_dict(cls, d: dict, qid: str | None = None) -> "GoldExample":
        return cls(
            question=d["question"],
            answers=[str(a) for a in d["answers"]],
            positive_passage_id=str(d["positive_passage_id"]),
            negative_passage_ids=[str(p) for p in d.get("negative_passage_ids", [])],
            qid=qid,
        )


@dataclass
class OverlapSplit:
    """Question-id sets for the full test set and its non-overlap subsets."""

    full: set[str]
    no_answer_overlap: set[str]
    no_question_overlap: set[str]

    def subset_ids(self, name: str) -> set[str]:
        if name == "full":
            return self.full
        if name == "no_answer_overlap":
            return self.no_answer_overlap
        if name == "no_question_overlap":
            return self.no_question_overlap
        raise KeyError(f"unknown overlap subset {name!r}")


def assign_qids(examples: Sequence[GoldExample], prefix: str = "q") -> None:
    """Give every example a positional id ("q00000", ...) if it has none."""
    for i, ex in enumerate(examples):
        if ex.qid is None:
            ex.qid = f"{prefix}{i:05d}"


def split_into_passages(doc: Document, block_size: int = DEFAULT_BLOCK_SIZE) -> list[Passage]:
    """Split a document into consecutive blocks of ``block_size`` words.

    Every passage except possibly the last has exactly ``block_size`` words;
    joining the passage texts in order reproduces the whitespace-normalized
    document text.
    """
    if block_size < 1:
        raise ValueError(f"block_size must be >= 1, got {block_size}")
    text = normalize_ws(doc.text)
    if not text:
        raise IngestError(f"document {doc.id!r} has no words")
    doc_words = text.split(" ")
    passages = []
    for i in range(0, len(doc_words), block_size):
        block = doc_words[i : i + block_size]
        idx = i // block_size
        passages.append(
            Passage(
                id=f"{doc.id}:{idx:04d}",
                doc_id=doc.id,
                title=doc.title,
                text=" ".join(block),
                word_count=len(block),
                position_index=idx,
            )
        )
    return passages


def split_documents(
    docs: Iterable[Document], block_size: int = DEFAULT_BLOCK_SIZE
) -> list[Passage]:
    """Split many documents; output is ordered by document then position."""
    out: list[Passage] = []
    for doc in docs:
        out.extend(split_into_passages(doc, block_size))
    return out


def _question_tokens(question: str) -> frozenset[str]:
    return frozenset(analyze(question))


def token_jaccard(a: str, b: str) -> float:
    """Jaccard similarity of the normalized token sets of two strings."""
    ta, tb = _question_tokens(a), _question_tokens(b)
    if not ta and not tb:
        return 1.0
    union = len(ta | tb)
    return len(ta & tb) / union if union else 0.0


def build_overlap_split(
    train: Sequence[GoldExample],
    test: Sequence[GoldExample],
    dup_threshold: float = DEFAULT_DUP_THRESHOLD,
) -> OverlapSplit:
    """Partition test questions by overlap with the training set.

    A test question leaves ``no_question_overlap`` when its normalized token
    Jaccard similarity with any training question reaches ``dup_threshold``,
    and leaves ``no_answer_overlap`` when any of its normalized answers
    exactly equals a normalized training answer.
    """
    if not 0.0 <= dup_threshold <= 1.0:
        raise ValueError(f"dup_threshold must be in [0, 1], got {dup_threshold}")
    assign_qids(test)
    train_token_sets = [_question_tokens(ex.question) for ex in train]
    train_answers = {normalize_answer(a) for ex in train for a in ex.answers}

    full: set[str] = set()
    no_answer: set[str] = set()
    no_question: set[str] = set()
    for ex in test:
        assert ex.qid is not None
        full.add(ex.qid)
        answers = {normalize_answer(a) for a in ex.answers}
        if not (answers & train_answers):
            no_answer.add(ex.qid)
        tokens = _question_tokens(ex.question)
        dup = False
        for tt in train_token_sets:
            union = len(tokens | tt)
            sim = (len(tokens & tt) / union) if union else 1.0
            if sim >= dup_threshold:
                dup = True
                break
        if not dup:
            no_question.add(ex.qid)
    return OverlapSplit(full=full, no_answer_overlap=no_answer, no_question_overlap=no_question)


# ---------------------------------------------------------------------------
# JSONL I/O
# ---------------------------------------------------------------------------

def load_jsonl(path: str | Path) -> list[dict]:
    """Load one JSON object per line; blank lines are not allowed mid-file."""
    records: list[dict] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonlError(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise JsonlError(str(path), lineno, "expected a JSON object")
            records.append(obj)
    return records


def write_jsonl(records: Iterable[dict], path: str | Path) -> None:
    """Write records as canonical JSONL (sorted keys, compact separators)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def _check_unique_ids(ids: Iterable[str], path: str | Path, what: str) -> None:
    seen: dict[str, int] = {}
    for lineno, pid in enumerate(ids, start=1):
        if pid in seen:
            raise JsonlError(
                str(path), lineno,
                f"duplicate {what} id {pid!r} (first seen at line {seen[pid]})",
            )
        seen[pid] = lineno


def load_documents(path: str | Path) -> list[Document]:
    records = load_jsonl(path)
    _check_unique_ids((str(r["id"]) for r in records), path, "document")
    return [Document(id=str(r["id"]), title=r.get("title", ""), text=r["text"]) for r in records]


def write_documents(docs: Iterable[Document], path: str | Path) -> None:
    write_jsonl(({"id": d.id, "title": d.title, "text": d.text} for d in docs), path)


def load_passages(path: str | Path) -> list[Passage]:
    records = load_jsonl(path)
    _check_unique_ids((str(r["id"]) for r in records), path, "passage")
    return [Passage.from_dict(r) for r in records]


def write_passages(passages: Iterable[Passage], path: str | Path) -> None:
    write_jsonl((p.to_dict() for p in passages), path)


def load_gold(path: str | Path, qid_prefix: str = "q") -> list[GoldExample]:
    records = load_jsonl(path)
    examples = [
        GoldExample.from_dict(r, qid=f"{qid_prefix}{i:05d}") for i, r in enumerate(records)
    ]
    for i, ex in enumerate(examples):
        if not ex.answers:
            raise JsonlError(str(path), i + 1, "gold example has no answers")
    return examples


def write_gold(examples: Iterable[GoldExample], path: str | Path) -> None:
    write_jsonl((ex.to_dict() for ex in examples), path)


def passages_by_id(passages: Iterable[Passage]) -> dict[str, Passage]:
    out: dict[str, Passage] = {}
    for p in passages:
        if p.id in out:
            raise IngestError(f"duplicate passage id {p.id!r}")
        out[p.id] = p
    return out
