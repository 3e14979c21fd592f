"""Corpus-built vocabulary and fixed-length caption encoding."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "[PAD]", "[UNK]"
MAX_TEXT_LEN = 40

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list:
    """Lowercase, then split at whitespace and punctuation (punctuation kept as tokens)."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, tokens):
        self.itos = [PAD_TOKEN, UNK_TOKEN, *tokens]
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def __getitem__(self, token):
        return self.stoi.get(token, UNK)

    def to_json(self) -> list:
        return self.itos[2:]

    @classmethod
    def from_json(cls, tokens) -> "Vocab":
        return cls(tokens)


def build_vocab(texts, min_freq: int = 1) -> Vocab:
    """Tokens seen at least ``min_freq`` times, by descending count then lexicographically."""
    counts = Counter()
    for text in texts:
        if text:
            counts.update(tokenize(text))
    kept = [tok for tok, n in counts.items() if n >= min_freq and tok not in (PAD_TOKEN, UNK_TOKEN)]
    kept.sort(key=lambda tok: (-counts[tok], tok))
    return Vocab(kept)


@dataclass
class TokenizedText:
    ids: np.ndarray
    mask: np.ndarray


def tokenize_pad(text, vocab: Vocab, max_len: int = MAX_TEXT_LEN) -> TokenizedText:
    tokens = tokenize(text or "")[:max_len]
    ids = np.full(max_len, PAD, dtype=np.int64)
    mask = np.zeros(max_len, dtype=np.int64)
    ids[: len(tokens)] = [vocab[t] for t in tokens]
    mask[: len(tokens)] = 1
    return TokenizedText(ids, mask)
