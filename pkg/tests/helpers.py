"""Shared builders for gold-labelled test sets with planted score noise."""

import numpy as np

from bimodal_tags.chooser import TestTriple
from bimodal_tags.siamese import derange_pairs

DUMMY = np.zeros(1)


def permutation_cycles(perm):
    seen, cycles = set(), []
    for i in range(len(perm)):
        if i in seen:
            continue
        cyc, j = [], i
        while j not in seen:
            seen.add(j)
            cyc.append(j)
            j = int(perm[j])
        cycles.append(cyc)
    return cycles


def planted_link_set(rng, n=60, flip_rate=0.4):
    """Triples wired by a derangement plus ``(score_a, score_b)`` per id.

    One member per cycle gets a wide, correct score gap (the intended
    anchor). Every other member gets a narrow gap whose sign is flipped
    with probability ``flip_rate``, so the general strategy errs there.
    Returns ``(triples, scores, cycles)`` with cycles as lists of ids.
    """
    perm = derange_pairs(n, rng)
    ids = [f"t{i:03d}" for i in range(n)]
    cycles = permutation_cycles(perm)
    anchors = {cyc[int(rng.integers(len(cyc)))] for cyc in cycles}
    triples, scores = [], {}
    for i in range(n):
        right, wrong = {f"d{i}"}, {f"d{int(perm[i])}"}
        gold = "A" if rng.random() < 0.5 else "B"
        a, b = (right, wrong) if gold == "A" else (wrong, right)
        triples.append(TestTriple(ids[i], DUMMY, a, DUMMY, b, DUMMY, gold))
        if i in anchors:
            s_right, s_wrong = rng.uniform(0, 0.5), rng.uniform(5, 10)
        else:
            base = rng.uniform(1, 2)
            gap = rng.uniform(0.01, 0.9)
            s_right, s_wrong = base, base + gap
            if rng.random() < flip_rate:
                s_right, s_wrong = s_wrong, s_right
        scores[ids[i]] = (s_right, s_wrong) if gold == "A" else (s_wrong, s_right)
    return triples, scores, [[ids[i] for i in cyc] for cyc in cycles]


def accuracy(decisions, triples):
    gold = {t.id: t.gold for t in triples}
    return sum(d.chosen == gold[d.id] for d in decisions) / len(decisions)


def anchors_correct(triples, scores, cycles):
    """Whether the widest-gap member of every cycle is scored the right way round."""
    by_id = {t.id: t for t in triples}
    for cyc in cycles:
        anchor = max(cyc, key=lambda tid: (scores[tid][0] - scores[tid][1]) ** 2)
        sa, sb = scores[anchor]
        if ("A" if sa <= sb else "B") != by_id[anchor].gold:
            return False
    return True


# Filled by the acceptance tests and echoed in the terminal summary.
ACCEPTANCE_LINES = []
