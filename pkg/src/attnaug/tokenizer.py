"""Word-piece tokenizer with exact piece-to-word alignment.

Training is a greedy frequency merge: start from characters, repeatedly fuse
the most frequent adjacent piece pair (lexicographic tie-break) until the
vocabulary is full.  Inference is greedy longest-match-first per word, which
guarantees each piece maps to exactly one source word; characters that match
nothing become single UNK pieces so alignment never slips.

The default normalizer lowercases (an uncased model); word boundaries are
unchanged, so word indices computed on the original text remain valid.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .errors import IngestError
from .textnorm import lower_ws

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
RESERVED = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
CONTINUATION = "##"

DEFAULT_MAX_LEN = 160


@dataclass
class Vocabulary:
    id_to_piece: list[str]
    piece_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.piece_to_id = {p: i for i, p in enumerate(self.id_to_piece)}
        if self.id_to_piece[: len(RESERVED)] != list(RESERVED):
            raise ValueError(f"vocabulary must start with the reserved pieces {RESERVED}")
        if len(self.piece_to_id) != len(self.id_to_piece):
            raise ValueError("vocabulary contains duplicate pieces")

    def __len__(self) -> int:
        return len(self.id_to_piece)

    def __contains__(self, piece: str) -> bool:
        return piece in self.piece_to_id

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for piece in self.id_to_piece:
                fh.write(piece + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            pieces = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(id_to_piece=pieces)


@dataclass
class TokenSequence:
    """Pieces plus the alignment back to whitespace words.

    ``word_index[i]`` is the source word of piece i (-1 for special tokens);
    ``words`` are the normalized whitespace words of the full text, including
    any truncated tail, so downstream code can tell what was dropped.
    """

    ids: list[int]
    pieces: list[str]
    word_index: list[int]
    special_mask: list[bool]
    words: list[str]
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def covered_words(self) -> int:
        """Number of leading words that still have at least one piece."""
        best = -1
        for w in self.word_index:
            if w > best:
                best = w
        return best + 1


def _segment_word(word: str) -> tuple[str, ...]:
    if not word:
        return ()
    return (word[0],) + tuple(CONTINUATION + c for c in word[1:])


def train_vocab(
    texts: Iterable[str],
    vocab_size: int,
    normalizer: Callable[[str], str] = lower_ws,
) -> Vocabulary:
    """Learn a word-piece vocabulary of at most ``vocab_size`` entries."""
    word_freq: Counter[str] = Counter()
    for text in texts:
        for w in normalizer(text).split():
            word_freq[w] += 1
    if not word_freq:
        raise IngestError("cannot train a vocabulary on an empty corpus")

    segmentations: dict[str, tuple[str, ...]] = {w: _segment_word(w) for w in word_freq}
    alphabet = sorted({p for seg in segmentations.values() for p in seg})
    min_size = len(RESERVED) + len(alphabet)
    if vocab_size < min_size:
        raise ValueError(
            f"vocab_size {vocab_size} is below reserved+alphabet size {min_size}"
        )

    pieces: list[str] = list(RESERVED) + alphabet
    known = set(pieces)
    while len(pieces) < vocab_size:
        pair_freq: Counter[tuple[str, str]] = Counter()
        for word, seg in segmentations.items():
            f = word_freq[word]
            for a, b in zip(seg, seg[1:]):
                pair_freq[(a, b)] += f
        if not pair_freq:
            break
        best_count = max(pair_freq.values())
        a, b = min(pair for pair, c in pair_freq.items() if c == best_count)
        merged = a + (b[len(CONTINUATION):] if b.startswith(CONTINUATION) else b)
        if merged not in known:
            # Distinct pairs can fuse to the same string (ab+##c / a+##bc);
            # the piece is added once, the segmentations still compact.
            pieces.append(merged)
            known.add(merged)
        changed = {}
        for word, seg in segmentations.items():
            i = 0
            out: list[str] = []
            while i < len(seg):
                if i + 1 < len(seg) and seg[i] == a and seg[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seg[i])
                    i += 1
            if len(out) != len(seg):
                changed[word] = tuple(out)
        if not changed:
            break
        segmentations.update(changed)
    return Vocabulary(id_to_piece=pieces)


def encode(
    vocab: Vocabulary,
    text: str,
    max_len: int = DEFAULT_MAX_LEN,
    normalizer: Callable[[str], str] = lower_ws,
) -> TokenSequence:
    """Encode text as [CLS] pieces... [SEP], truncating to ``max_len``."""
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    text = normalizer(text)
    all_words = text.split() if text else []

    pieces: list[str] = [CLS]
    word_index: list[int] = [-1]
    for wi, word in enumerate(all_words):
        pos = 0
        while pos < len(word):
            match = None
            for end in range(len(word), pos, -1):
                cand = word[pos:end] if pos == 0 else CONTINUATION + word[pos:end]
                if cand in vocab:
                    match = (cand, end)
                    break
            if match is None:
                pieces.append(UNK)
                word_index.append(wi)
                pos += 1
            else:
                pieces.append(match[0])
                word_index.append(wi)
                pos = match[1]

    truncated = False
    if len(pieces) + 1 > max_len:
        pieces = pieces[: max_len - 1]
        word_index = word_index[: max_len - 1]
        truncated = True
    pieces.append(SEP)
    word_index.append(-1)

    special = [wi < 0 for wi in word_index]
    ids = [vocab.piece_to_id[p] for p in pieces]
    return TokenSequence(
        ids=ids,
        pieces=pieces,
        word_index=word_index,
        special_mask=special,
        words=all_words,
        truncated=truncated,
    )


def decode(vocab: Vocabulary, seq: TokenSequence) -> str:
    """Reassemble the text covered by the sequence's non-special pieces."""
    words: list[str] = []
    last_word = None
    for piece, wi in zip(seq.pieces, seq.word_index):
        if wi < 0:
            continue
        chunk = piece[len(CONTINUATION):] if piece.startswith(CONTINUATION) else piece
        if wi != last_word:
            words.append(chunk)
            last_word = wi
        else:
            words[-1] += chunk
    return " ".join(words)
