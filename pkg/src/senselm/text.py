"""Word-level text handling: tokenizer, vocabulary, and anchor embeddings.

The anchor embedding table is a pure function of the word string (hash-seeded
gaussian draws), so anchors are identical across runs, machines, and model
instantiations at a given width. It stands in for a pretrained text space.
"""

from __future__ import annotations

import re
import warnings
import zlib
from pathlib import Path

import numpy as np

from .errors import VocabError

PAD, BOS, EOS, SEP = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<sep>")

_WORD_RE = re.compile(r"[a-z0-9']+")
_ANCHOR_KEY = 0x5E75E  # master key for the frozen text space; never run-seeded


def tokenize_words(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation; punctuation is dropped."""
    return _WORD_RE.findall(text.lower())


def word_vector(word: str, dim: int) -> np.ndarray:
    """Deterministic unit-scale embedding of one word, independent of run seeds."""
    key = zlib.crc32(word.encode("utf-8"))
    rng = np.random.default_rng(np.random.SeedSequence([_ANCHOR_KEY, key]))
    return rng.standard_normal(dim) / np.sqrt(dim)


def text_anchor(text: str, dim: int) -> np.ndarray:
    """Mean of the frozen word embeddings; empty text flags and returns zeros."""
    words = tokenize_words(text)
    if not words:
        warnings.warn("text_anchor on empty text; returning a zero vector")
        return np.zeros(dim)
    vecs = np.stack([word_vector(w, dim) for w in words])
    return vecs.mean(axis=0)


class Vocab:
    """Bijective word <-> index mapping with fixed reserved indices 0-3."""

    def __init__(self, words: list[str]):
        for i, tok in enumerate(RESERVED):
            if words[i] != tok:
                raise VocabError(f"reserved slot {i} must be {tok!r}, got {words[i]!r}")
        if len(set(words)) != len(words):
            raise VocabError("vocabulary words must be unique")
        self.words = list(words)
        self.index = {w: i for i, w in enumerate(words)}

    def __len__(self):
        return len(self.words)

    def __contains__(self, word: str):
        return word in self.index

    @classmethod
    def from_texts(cls, texts) -> "Vocab":
        seen = set()
        for text in texts:
            seen.update(tokenize_words(text))
        return cls(list(RESERVED) + sorted(seen))

    def encode(self, text: str) -> list[int]:
        ids = []
        for w in tokenize_words(text):
            if w not in self.index:
                raise VocabError(f"word {w!r} not in vocabulary")
            ids.append(self.index[w])
        return ids

    def decode(self, ids) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.words):
                raise VocabError(f"token index {i} outside vocabulary of {len(self.words)}")
            if i == PAD or i == BOS or i == EOS or i == SEP:
                continue
            out.append(self.words[i])
        return " ".join(out)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.words) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        words = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([w for w in words if w != ""])
