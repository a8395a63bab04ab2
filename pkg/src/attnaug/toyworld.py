"""Synthetic benchmark corpus with planted entities and a known bias.

Every document is a fixed number of sentences of the form
"{Subject} {verb} {Object} {filler}." where subject and object are unique
two-word invented names drawn from a small syllable pool.  Gold questions
replace a sentence's subject with "who", so the answer is always the
subject surface and every question has exactly one answering passage.

The training split is deliberately skewed: most train questions come from
first sentences, while the test split is uniform over sentence positions.
A retriever trained on the skewed split has every incentive to attend only
to first-sentence entities, which is precisely the failure mode the rest
of this package is built to measure and repair.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Document, GoldExample, write_gold, write_documents
from .hashing import derive_seed
from .ner import Gazetteer

_SYLLABLES = (
    "ba", "re", "mo", "ta", "li", "son", "ker", "vin", "da", "lor",
    "mi", "fen", "gar", "nu", "sel", "tor", "pa", "ru", "ki", "zen",
)

_VERBS = (
    "founded", "discovered", "built", "described", "visited", "acquired",
    "measured", "painted", "mapped", "charted", "studied", "restored",
    "documented", "surveyed", "photographed", "catalogued",
)

_FILLERS = (
    "near the old river", "during the long winter", "at the northern gate",
    "beside the stone bridge", "after the first frost", "under the open sky",
    "within the walled garden", "along the coastal road",
    "before the spring festival", "outside the main hall",
    "across the high plateau", "behind the west tower",
)

# Planted entities cycle through every non-heuristic type so type-dependent
# logic downstream sees realistic variety.
_TYPE_CYCLE = (
    "PERSON", "NORP", "FACILITY", "ORG", "GPE", "LOCATION",
    "PRODUCT", "EVENT", "WORK_OF_ART", "LAW", "LANGUAGE",
)


@dataclass
class ToyWorldConfig:
    docs: int = 200
    sentences_per_doc: int = 4
    train_questions: int = 100
    test_questions: int = 100
    first_sentence_bias: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.docs < 1 or self.sentences_per_doc < 2:
            raise ValueError("need >= 1 doc and >= 2 sentences per doc")
        if not (0.0 <= self.first_sentence_bias <= 1.0):
            raise ValueError("first_sentence_bias must be in [0, 1]")
        total = self.docs * self.sentences_per_doc
        if self.train_questions + self.test_questions > total:
            raise ValueError(
                f"{self.train_questions}+{self.test_questions} questions requested "
                f"but only {total} facts exist"
            )


@dataclass
class ToyWorld:
    documents: list[Document]
    gold_train: list[GoldExample]
    gold_test: list[GoldExample]
    gazetteer_entries: dict[str, str] = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "documents": out / "documents.jsonl",
            "gold_train": out / "gold_train.jsonl",
            "gold_test": out / "gold_test.jsonl",
            "gazetteer": out / "gazetteer.json",
        }
        write_documents(self.documents, paths["documents"])
        write_gold(self.gold_train, paths["gold_train"])
        write_gold(self.gold_test, paths["gold_test"])
        Gazetteer(self.gazetteer_entries).save(paths["gazetteer"])
        return paths


def _name(rng: random.Random, used: set[str]) -> str:
    while True:
        first = (rng.choice(_SYLLABLES) + rng.choice(_SYLLABLES)).capitalize()
        second = (rng.choice(_SYLLABLES) + rng.choice(_SYLLABLES)).capitalize()
        name = f"{first} {second}"
        if name not in used:
            used.add(name)
            return name


def _question_for(sentence: str) -> str:
    # subject = first two words; strip the closing period, lowercase
    words = sentence.split(" ")
    return " ".join(["who"] + words[2:]).rstrip(".").lower()


def build_toy_world(config: ToyWorldConfig) -> ToyWorld:
    rng = random.Random(derive_seed("toyworld", config.seed))
    used_names: set[str] = set()
    gazetteer: dict[str, str] = {}
    documents: list[Document] = []
    # facts[(doc_index, sentence_index)] = (sentence_text, subject_surface)
    facts: dict[tuple[int, int], tuple[str, str]] = {}
    type_i = 0

    for d in range(config.docs):
        sentences = []
        verbs = rng.sample(_VERBS, config.sentences_per_doc)
        for s in range(config.sentences_per_doc):
            subject = _name(rng, used_names)
            obj = _name(rng, used_names)
            gazetteer[subject] = _TYPE_CYCLE[type_i % len(_TYPE_CYCLE)]
            gazetteer[obj] = _TYPE_CYCLE[(type_i + 5) % len(_TYPE_CYCLE)]
            type_i += 1
            sentence = f"{subject} {verbs[s]} {obj} {rng.choice(_FILLERS)}."
            sentences.append(sentence)
            facts[(d, s)] = (sentence, subject)
        documents.append(
            Document(id=f"doc{d:04d}", title=sentences[0].split(" ")[0], text=" ".join(sentences))
        )

    def gold_for(key: tuple[int, int]) -> GoldExample:
        d, s = key
        sentence, subject = facts[key]
        return GoldExample(
            question=_question_for(sentence),
            answers=[subject],
            positive_passage_id=f"doc{d:04d}:0000",
            negative_passage_ids=[],
        )

    first_keys = [(d, 0) for d in range(config.docs)]
    later_keys = [
        (d, s) for d in range(config.docs) for s in range(1, config.sentences_per_doc)
    ]
    rng.shuffle(first_keys)
    rng.shuffle(later_keys)

    n_first = min(round(config.train_questions * config.first_sentence_bias), len(first_keys))
    n_later = config.train_questions - n_first
    train_keys = first_keys[:n_first] + later_keys[:n_later]

    # test draws uniformly over sentence positions from unused facts
    remaining_by_sentence: dict[int, list[tuple[int, int]]] = {
        s: [] for s in range(config.sentences_per_doc)
    }
    train_set = set(train_keys)
    for key in first_keys + later_keys:
        if key not in train_set:
            remaining_by_sentence[key[1]].append(key)
    test_keys: list[tuple[int, int]] = []
    per_slot = config.test_questions // config.sentences_per_doc
    extra = config.test_questions - per_slot * config.sentences_per_doc
    for s in range(config.sentences_per_doc):
        want = per_slot + (1 if s < extra else 0)
        pool = remaining_by_sentence[s]
        if len(pool) < want:
            raise ValueError(
                f"sentence slot {s} has only {len(pool)} unused facts, need {want}"
            )
        test_keys.extend(pool[:want])

    return ToyWorld(
        documents=documents,
        gold_train=[gold_for(k) for k in train_keys],
        gold_test=[gold_for(k) for k in test_keys],
        gazetteer_entries=gazetteer,
    )
