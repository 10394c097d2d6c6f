"""Tag vocabulary and binary bag-of-words encoding."""

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

DEFAULT_VOCAB_SIZE = 4000


def normalize_tag(tag: str) -> str:
    return " ".join(str(tag).lower().split())


def normalize_tags(tags) -> list:
    """Normalize a tag list; a bare string is split on whitespace."""
    if isinstance(tags, str):
        tags = tags.split()
    out = [normalize_tag(t) for t in tags]
    return [t for t in out if t]


def description_key(tags) -> frozenset:
    """Order- and duplicate-insensitive identity of a description."""
    return frozenset(normalize_tags(tags))


@dataclass(frozen=True)
class Vocabulary:
    words: tuple
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        idx = {w: i for i, w in enumerate(self.words)}
        if len(idx) != len(self.words):
            raise ValidationError("vocabulary contains duplicate words")
        object.__setattr__(self, "index", idx)

    def __len__(self):
        return len(self.words)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.words:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(tuple(line.rstrip("\n") for line in fh if line.rstrip("\n")))


def build_vocabulary(corpus: Iterable[Sequence[str]], size: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    """Keep the ``size`` most frequent tokens; ties resolve lexicographically.

    Frequency counts occurrences across the whole corpus.
    """
    counts = Counter()
    for tags in corpus:
        counts.update(normalize_tags(tags))
    if not counts:
        raise ValidationError("corpus is empty after normalization")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary(tuple(w for w, _ in ranked[:size]))


def encode_bow(tags, vocab: Vocabulary) -> np.ndarray:
    if len(vocab) == 0:
        raise ValidationError("vocabulary is empty")
    bits = np.zeros(len(vocab))
    for t in normalize_tags(tags):
        i = vocab.index.get(t)
        if i is not None:
            bits[i] = 1.0
    return bits


def encode_bow_matrix(tag_lists, vocab: Vocabulary) -> np.ndarray:
    return np.stack([encode_bow(t, vocab) for t in tag_lists]) if tag_lists else np.zeros((0, len(vocab)))
