"""Subword vocabulary training and encoding for ontology descriptions.

Training is WordPiece-style: words are pre-split into characters (non-initial
pieces carry the ``##`` marker) and adjacent pieces are merged iteratively,
scoring each candidate pair by pair_count / (left_count * right_count). Ties
break lexicographically so training is deterministic and independent of
corpus order. Encoding is greedy longest-match-first.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ConfigurationError, DataError

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
SPECIALS = (PAD, UNK, CLS, SEP, MASK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID = range(5)
DEFAULT_VOCAB_SIZE = 2025
DEFAULT_MAX_LEN = 64


def pretokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, and peel every non-alphanumeric
    character off into its own single-char token."""
    words: list[str] = []
    for chunk in text.lower().split():
        run = ""
        for ch in chunk:
            if ch.isalnum():
                run += ch
            else:
                if run:
                    words.append(run)
                    run = ""
                words.append(ch)
        if run:
            words.append(run)
    return words


@dataclass
class Vocabulary:
    tokens: list[str]
    target_size: int

    def __post_init__(self):
        if self.tokens[: len(SPECIALS)] != list(SPECIALS):
            raise ConfigurationError("vocabulary must start with the special tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id_of(self, token: str) -> int:
        return self.index[token]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.tokens:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tokens=tokens, target_size=len(tokens))


@dataclass(frozen=True)
class TokenSequence:
    """Fixed-length id sequence: [CLS] pieces... [SEP] [PAD]*."""

    ids: tuple[int, ...]
    length: int  # attention length, padding excluded

    def content_ids(self) -> tuple[int, ...]:
        return tuple(i for i in self.ids[: self.length] if i not in (CLS_ID, SEP_ID))


def _initial_pieces(word: str) -> tuple[str, ...]:
    return (word[0],) + tuple("##" + c for c in word[1:])


def train_vocab(corpus: Iterable[str], target_size: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    """Build a subword vocabulary by iterative pair merging.

    Stops at ``target_size`` or when no mergeable pairs remain (smaller
    vocabulary, with a warning). Pair statistics are maintained incrementally;
    only words containing the merged pair are reprocessed.
    """
    word_counts: Counter[str] = Counter()
    for doc in corpus:
        word_counts.update(pretokenize(doc))
    if not word_counts:
        raise DataError("train_vocab: empty corpus")

    words = [(list(_initial_pieces(w)), n) for w, n in sorted(word_counts.items())]
    alphabet = sorted({p for pieces, _ in words for p in pieces})
    if target_size <= len(SPECIALS) + len(alphabet):
        raise ConfigurationError(
            f"target_size {target_size} not above specials+alphabet ({len(SPECIALS) + len(alphabet)})"
        )

    pair_counts: Counter[tuple[str, str]] = Counter()
    piece_counts: Counter[str] = Counter()
    pair_words: dict[tuple[str, str], set[int]] = {}

    def account(wi: int, sign: int) -> None:
        pieces, n = words[wi]
        for p in pieces:
            piece_counts[p] += sign * n
            if piece_counts[p] == 0:
                del piece_counts[p]
        for pair in zip(pieces, pieces[1:]):
            pair_counts[pair] += sign * n
            if pair_counts[pair] == 0:
                del pair_counts[pair]
                pair_words.pop(pair, None)
            elif sign > 0:
                pair_words.setdefault(pair, set()).add(wi)

    for wi in range(len(words)):
        account(wi, +1)

    tokens = list(SPECIALS) + alphabet
    index = set(tokens)
    while len(tokens) < target_size:
        if not pair_counts:
            warnings.warn(
                f"train_vocab: merges exhausted at {len(tokens)} < target {target_size}",
                stacklevel=2,
            )
            break

        def score(pair: tuple[str, str]) -> float:
            return pair_counts[pair] / (piece_counts[pair[0]] * piece_counts[pair[1]])

        best = min(pair_counts, key=lambda p: (-score(p), _merge(p), p))
        merged = _merge(best)
        for wi in sorted(pair_words.get(best, ())):
            account(wi, -1)
            words[wi] = (_apply_merge(words[wi][0], best, merged), words[wi][1])
            account(wi, +1)
        if merged not in index:
            tokens.append(merged)
            index.add(merged)

    return Vocabulary(tokens=tokens, target_size=target_size)


def _merge(pair: tuple[str, str]) -> str:
    left, right = pair
    return left + (right[2:] if right.startswith("##") else right)


def _apply_merge(pieces: list[str], pair: tuple[str, str], merged: str) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(pieces):
        if i + 1 < len(pieces) and pieces[i] == pair[0] and pieces[i + 1] == pair[1]:
            out.append(merged)
            i += 2
        else:
            out.append(pieces[i])
            i += 1
    return out


def _segment_word(word: str, vocab: Vocabulary) -> list[str]:
    """Greedy longest-match-first pieces; the whole word collapses to UNK when
    any span cannot be matched."""
    pieces: list[str] = []
    start = 0
    while start < len(word):
        end = len(word)
        found = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = "##" + sub
            if sub in vocab:
                found = sub
                break
            end -= 1
        if found is None:
            return [UNK]
        pieces.append(found)
        start = end
    return pieces


def tokenize_text(text: str, vocab: Vocabulary) -> list[str]:
    out: list[str] = []
    for word in pretokenize(text):
        out.extend(_segment_word(word, vocab))
    return out


def count_pieces(text: str, vocab: Vocabulary) -> int:
    return len(tokenize_text(text, vocab))


def encode(
    descriptions: Sequence[str] | str,
    vocab: Vocabulary,
    max_len: int = DEFAULT_MAX_LEN,
) -> TokenSequence:
    """Encode description(s) into [CLS] pieces [SEP] padded to ``max_len``.

    Descriptions are joined by a single space before pretokenization.
    """
    text = descriptions if isinstance(descriptions, str) else " ".join(descriptions)
    pieces = tokenize_text(text, vocab)
    if len(pieces) + 2 > max_len:
        raise DataError(
            f"sequence tokenizes to {len(pieces) + 2} tokens, over max_len {max_len}; "
            "split snapshots before encoding"
        )
    ids = [CLS_ID] + [vocab.id_of(p) for p in pieces] + [SEP_ID]
    length = len(ids)
    ids.extend([PAD_ID] * (max_len - length))
    return TokenSequence(ids=tuple(ids), length=length)


def decode(seq: TokenSequence, vocab: Vocabulary) -> str:
    """Inverse of encode up to UNK loss and casing; specials are stripped."""
    words: list[str] = []
    for i in seq.ids:
        if i >= len(vocab) or i < 0:
            raise DataError(f"decode: id {i} outside vocabulary of size {len(vocab)}")
        if i in (PAD_ID, CLS_ID, SEP_ID, MASK_ID):
            continue
        token = vocab.tokens[i]
        if token.startswith("##") and words:
            words[-1] += token[2:]
        else:
            words.append(token)
    return " ".join(words)
