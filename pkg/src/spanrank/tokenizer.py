"""Word-level tokenizer with a corpus-derived vocabulary.

Tokens are maximal runs of word characters or single non-space,
non-word characters, lowercased. Ids 0-5 are reserved for the special
tokens; corpus tokens start at 6.
"""

from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

import numpy as np

log = logging.getLogger(__name__)

PAD, UNK, CLS, SEP, A_START, A_END = 0, 1, 2, 3, 4, 5
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[A]", "[/A]")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[tuple[str, int, int]]:
    """Split ``text`` into (lowercased token, char start, char end) triples."""
    return [(m.group().lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def words(text: str) -> list[str]:
    return [m.group().lower() for m in _TOKEN_RE.finditer(text)]


def span_surface(text: str, start: int, end: int, tokens=None) -> str:
    """Original-text substring covered by tokens ``[start, end)``."""
    tokens = tokenize(text) if tokens is None else tokens
    if not 0 <= start < end <= len(tokens):
        raise IndexError(f"span [{start}, {end}) out of range for {len(tokens)} tokens")
    return text[tokens[start][1] : tokens[end - 1][2]]


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple[int, ...]
    source_offsets: tuple[tuple[int, int], ...]

    def __len__(self):
        return len(self.ids)


class Vocab:
    """Immutable bijection between tokens and ids."""

    def __init__(self, tokens: Iterable[str]):
        tokens = list(tokens)
        if tuple(tokens[:6]) != SPECIAL_TOKENS:
            raise ValueError("the first six vocabulary entries must be the reserved tokens")
        self._tokens = tuple(tokens)
        self._ids = {t: i for i, t in enumerate(self._tokens)}
        if len(self._ids) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @property
    def size(self) -> int:
        return len(self._tokens)

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return token in self._ids

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, i: int) -> str:
        return self._tokens[i]

    def ids(self, toks: Iterable[str]) -> np.ndarray:
        return np.array([self._ids.get(t, UNK) for t in toks], dtype=np.int64)

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self._tokens).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for t in self._tokens:
                f.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls(line.rstrip("\n") for line in f)


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocab:
    """Reserved tokens plus the ``max_size - 6`` most frequent corpus tokens.

    Frequency ties are broken lexicographically.
    """
    if max_size < 7:
        raise ValueError(f"max_size must be >= 7 to hold any corpus token, got {max_size}")
    counts = Counter()
    for text in corpus:
        counts.update(words(text))
    for special in SPECIAL_TOKENS:
        counts.pop(special.lower(), None)
    if not counts:
        log.warning("empty corpus: vocabulary holds only the reserved tokens")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab(SPECIAL_TOKENS + tuple(t for t, _ in ranked[: max_size - 6]))


def encode(vocab: Vocab, text: str) -> TokenSeq:
    """Encode ``text``; offsets are UTF-8 byte offsets into the original string."""
    toks = tokenize(text)
    if not toks:
        return TokenSeq((), ())
    byte_pos = np.concatenate([[0], np.cumsum([len(ch.encode("utf-8")) for ch in text])])
    ids = tuple(vocab.id(t) for t, _, _ in toks)
    offsets = tuple((int(byte_pos[s]), int(byte_pos[e])) for _, s, e in toks)
    return TokenSeq(ids, offsets)


def decode(vocab: Vocab, ids: Iterable[int]) -> str:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise IndexError(f"token id {i} out of range for vocabulary of size {vocab.size}")
        out.append(vocab.token(i))
    return " ".join(out)
