from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bimodal_tags.errors import ValidationError
from bimodal_tags.text_features import (
    Vocabulary, build_vocabulary, description_key, encode_bow, encode_bow_matrix, normalize_tags)

words = st.sampled_from(list("abcdefgh"))
corpora = st.lists(st.lists(words, min_size=1, max_size=5), min_size=1, max_size=12)


def test_example_vocab():
    assert build_vocabulary([["a", "b"], ["a", "c"], ["a"]], size=2).words == ("a", "b")


def test_size_larger_than_tokens_keeps_all():
    v = build_vocabulary([["x", "y"], ["z"]], size=100)
    assert set(v.words) == {"x", "y", "z"}


def test_rebuild_identical():
    corpus = [["sky", "blue"], ["Sky", "tree"], ["tree"]]
    assert build_vocabulary(corpus) == build_vocabulary(corpus)


def test_empty_corpus_rejected():
    with pytest.raises(ValidationError):
        build_vocabulary([[], ["  "]])


def test_normalization():
    assert normalize_tags(["  Big   Dog ", "CAT", ""]) == ["big dog", "cat"]
    assert description_key(["Cat", "dog"]) == description_key(["dog", "cat", "cat"])


def test_encode_examples():
    v = Vocabulary(("a", "b", "c", "d"))
    np.testing.assert_array_equal(encode_bow(["b", "d"], v), [0, 1, 0, 1])
    np.testing.assert_array_equal(encode_bow(["x", "y"], v), [0, 0, 0, 0])
    np.testing.assert_array_equal(encode_bow(["a", "a", "b"], Vocabulary(("a", "b"))), [1, 1])


def test_bow_length_is_vocab_size():
    v = Vocabulary(tuple(f"w{i}" for i in range(4000)))
    assert encode_bow(["w3", "w3999"], v).shape == (4000,)
    assert encode_bow_matrix([["w1"], []], v).shape == (2, 4000)


def test_duplicate_vocab_rejected():
    with pytest.raises(ValidationError):
        Vocabulary(("a", "a"))


def test_vocab_file_roundtrip(tmp_path):
    v = Vocabulary(("alpha", "big dog", "c"))
    v.save(tmp_path / "v.txt")
    assert (tmp_path / "v.txt").read_text().splitlines() == ["alpha", "big dog", "c"]
    assert Vocabulary.load(tmp_path / "v.txt") == v


@settings(max_examples=200, deadline=None)
@given(corpora, st.integers(1, 8))
def test_top_k_property(corpus, size):
    vocab = build_vocabulary(corpus, size=size)
    counts = Counter(w for tags in corpus for w in tags)
    assert len(vocab) == min(size, len(counts))
    kept = set(vocab.words)
    for w in counts:
        if w not in kept:
            assert all(counts[k] > counts[w] or (counts[k] == counts[w] and k < w) for k in kept)


@settings(max_examples=200, deadline=None)
@given(st.lists(words, max_size=8), st.randoms())
def test_encode_permutation_and_duplication_invariant(tags, rnd):
    v = Vocabulary(tuple("abcdef"))
    shuffled = tags + tags[: len(tags) // 2]
    rnd.shuffle(shuffled)
    np.testing.assert_array_equal(encode_bow(tags, v), encode_bow(shuffled, v))
