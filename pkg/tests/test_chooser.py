import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bimodal_tags.chooser import (
    Decision, TestTriple, auc, build_link_graph, choose_all, choose_general, decide, pair_dissimilarity,
    pair_probability, resolve_from_scores)
from bimodal_tags.errors import DataIntegrityError, UndefinedAUCError, ValidationError
from bimodal_tags.numeric import make_rng
from bimodal_tags.siamese import SiameseParams, Subnet
from helpers import DUMMY, accuracy, anchors_correct, planted_link_set


def triple(tid, a, b, gold=None):
    return TestTriple(tid, DUMMY, {a}, DUMMY, {b}, DUMMY, gold)


def animals():
    return [triple("A", "dog", "cat"), triple("B", "cat", "bird"), triple("C", "bird", "dog")]


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return total / (len(pos) * len(neg))


def fixed_code_siamese(image_bias, text_bias):
    def net(bias):
        k = len(bias)
        return Subnet(np.zeros((1, k)), np.array(bias, float), np.zeros((k, 1)), np.zeros(1))
    return SiameseParams(net(image_bias), net(text_bias))


class TestScoring:
    def test_identical_codes_zero(self):
        s = fixed_code_siamese([0.3, -1.0], [0.3, -1.0])
        assert pair_dissimilarity(s, [0.0], [0.0]) == 0.0

    def test_c_three_gives_nine(self):
        s = fixed_code_siamese([50, 50, 50, 0, 0, 0], [-50, -50, -50, 0, 0, 0])
        assert pair_dissimilarity(s, [0.0], [0.0]) == pytest.approx(9.0, abs=1e-12)

    def test_monotone(self):
        near = fixed_code_siamese([50, 0], [-50, 0])
        far = fixed_code_siamese([50, 50], [-50, -50])
        assert pair_dissimilarity(near, [0.0], [0.0]) < pair_dissimilarity(far, [0.0], [0.0])

    def test_choose_general_picks_smaller(self):
        s = fixed_code_siamese([50, 50], [-50, -50])
        s.text_net.W_enc = np.array([[100.0, 100.0]])
        on, off = np.ones(1), np.zeros(1)
        d = choose_general(TestTriple("x", off, {"a"}, on, {"b"}, off), s)
        assert d.chosen == "A" and d.score_a == pytest.approx(0.0) and d.score_b == pytest.approx(4.0)
        assert choose_general(TestTriple("x", off, {"a"}, off, {"b"}, on), s).chosen == "B"


class TestDecide:
    def test_smaller_wins(self):
        assert decide("x", 1.0, 4.0).chosen == "A"
        assert decide("x", 4.0, 1.0).chosen == "B"

    def test_tie_goes_to_a(self, caplog):
        with caplog.at_level(logging.WARNING):
            d = decide("x", 2.0, 2.0)
        assert d.chosen == "A" and d.tie and "tied" in caplog.text

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, 100), st.floats(0, 100))
    def test_swap_symmetry(self, a, b):
        if a == b:
            return
        assert {"A": "B", "B": "A"}[decide("x", a, b).chosen] == decide("x", b, a).chosen

    def test_same_candidates_rejected(self):
        with pytest.raises(ValidationError):
            TestTriple("x", DUMMY, ["Dog", "cat"], DUMMY, ["cat", "dog"], DUMMY)


class TestLinkGraph:
    def test_three_cycle(self):
        g = build_link_graph(animals())
        assert g.cycles == [("A", "B", "C")] and g.unlinked == [] and g.chains == []

    def test_two_cycle(self):
        g = build_link_graph([triple("X", "u", "v"), triple("Y", "v", "u")])
        assert g.cycles == [("X", "Y")]

    def test_all_unlinked(self):
        g = build_link_graph([triple("P", "a", "b"), triple("Q", "c", "d")])
        assert g.cycles == [] and g.unlinked == ["P", "Q"]

    def test_description_in_three_triples(self):
        with pytest.raises(DataIntegrityError):
            build_link_graph([triple("A", "x", "y"), triple("B", "x", "z"), triple("C", "w", "x")])

    def test_description_matching_ignores_case_and_order(self):
        ts = [TestTriple("A", DUMMY, ["Big", "dog"], DUMMY, ["cat"], DUMMY),
              TestTriple("B", DUMMY, ["CAT"], DUMMY, ["dog", "big"], DUMMY)]
        assert build_link_graph(ts).cycles == [("A", "B")]

    def test_chain(self):
        g = build_link_graph([triple("A", "x", "y"), triple("B", "y", "z")])
        assert g.chains == [("A", "B")] and g.cycles == []

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2 ** 32))
    def test_invariant_to_order_and_swaps(self, seed):
        rng = make_rng(seed)
        triples, _, _ = planted_link_set(rng, n=12)
        base = build_link_graph(triples)
        shuffled = [triples[i] for i in rng.permutation(len(triples))]
        swapped = [TestTriple(t.id, t.image, t.cand_b, t.text_b, t.cand_a, t.text_a) if rng.random() < 0.5 else t
                   for t in shuffled]
        other = build_link_graph(swapped)
        assert (other.cycles, other.chains, other.unlinked) == (base.cycles, base.chains, base.unlinked)


class TestResolve:
    def test_propagation(self):
        ts = animals()
        scores = {"A": (0.1, 0.9), "B": (0.6, 0.5), "C": (0.55, 0.5)}
        ds = resolve_from_scores(build_link_graph(ts), ts, scores)
        assert [d.chosen for d in ds] == ["A", "A", "A"]  # dog, cat, bird
        assert all(d.method == "link" for d in ds)

    def test_anchor_is_widest_gap(self):
        ts = animals()
        scores = {"A": (0.9, 0.1), "B": (0.5, 0.4), "C": (0.3, 0.8)}
        ds = resolve_from_scores(build_link_graph(ts), ts, scores)
        # A decides cat, so cat is wrong for B (bird) and bird wrong for C (dog)
        assert [d.chosen for d in ds] == ["B", "B", "B"]

    def test_unlinked_match_general(self, rng):
        ts = [triple(f"u{i}", f"a{i}", f"b{i}") for i in range(10)]
        scores = {t.id: tuple(rng.random(2)) for t in ts}
        link = resolve_from_scores(build_link_graph(ts), ts, scores)
        assert [d.chosen for d in link] == [decide(t.id, *scores[t.id]).chosen for t in ts]
        assert all(d.method == "general" for d in link)

    def test_chain_resolves(self):
        # x right for A makes y wrong for A, hence right for B
        ts = [triple("A", "x", "y", "A"), triple("B", "y", "z", "A")]
        ds = resolve_from_scores(build_link_graph(ts), ts, {"A": (0.0, 9.0), "B": (1.1, 1.0)})
        assert [d.chosen for d in ds] == ["A", "A"]
        assert accuracy(ds, ts) == 1.0

    def test_correct_anchor_fixes_cycle(self):
        for seed in range(20):
            triples, scores, cycles = planted_link_set(make_rng(seed, 1), n=30)
            assert anchors_correct(triples, scores, cycles)
            ds = resolve_from_scores(build_link_graph(triples), triples, scores)
            assert accuracy(ds, triples) == 1.0

    def test_choose_all_strategies(self):
        s = fixed_code_siamese([1.0], [0.0])
        ts = [TestTriple("A", np.zeros(1), {"x"}, np.zeros(1), {"y"}, np.zeros(1))]
        assert choose_all(ts, s, "general")[0].method == "general"
        with pytest.raises(ValidationError):
            choose_all(ts, s, "other")


class TestProbability:
    def test_examples(self):
        assert pair_probability(1.0, 2.0) == pytest.approx(0.2, abs=1e-15)
        assert pair_probability(3.0, 3.0) == 0.5
        assert pair_probability(0.0, 2.0) == 0.0

    def test_both_zero(self):
        with pytest.warns(RuntimeWarning):
            assert pair_probability(0.0, 0.0) == 0.5
        assert Decision("x", "A", 0.0, 0.0, "general", True).degenerate

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 1e6), st.floats(0, 1e6))
    def test_complement(self, a, b):
        if a + b == 0:
            return
        assert pair_probability(a, b) + pair_probability(b, a) == pytest.approx(1.0, abs=1e-12)

    def test_record_roundtrip(self):
        d = decide("x", 1.0, 2.0)
        rec = d.to_record()
        assert rec["probability"] == pytest.approx(0.2) and rec["prob_a_correct"] == pytest.approx(0.8)
        assert Decision.from_record(rec) == d


class TestAuc:
    def test_examples(self):
        assert auc([(0.9, 1), (0.8, 1), (0.1, 0), (0.2, 0)]) == 1.0
        assert auc([0.9, 0.8, 0.7, 0.85], [1, 1, 0, 0]) == 0.75
        assert auc([0.4] * 5, [1, 0, 1, 0, 0]) == 0.5

    def test_single_class(self):
        with pytest.raises(UndefinedAUCError):
            auc([0.1, 0.2], [1, 1])

    def test_matches_brute_force(self):
        rng = make_rng(77)
        for _ in range(100):
            n = int(rng.integers(2, 60))
            scores = np.round(rng.random(n), 1)
            labels = rng.integers(0, 2, n)
            labels[0], labels[1] = 0, 1
            assert abs(auc(scores, labels) - brute_auc(scores, labels)) <= 1e-12
