"""Choosing the correct description of a test image.

Each test triple offers two candidate descriptions, A and B. The general
strategy scores both against the image and keeps the one with the smaller
dissimilarity ``C**2``. The link strategy exploits test sets where every
incorrect description is some other image's correct description: shared
descriptions chain triples into cycles, one confident decision per cycle
fixes all of its members.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .errors import DataIntegrityError, DimensionError, UndefinedAUCError, ValidationError
from .siamese import SiameseParams, compatibility
from .text_features import description_key

log = logging.getLogger(__name__)

CANDIDATES = ("A", "B")


def _other(cand):
    return "B" if cand == "A" else "A"


@dataclass
class TestTriple:
    __test__ = False  # not a pytest class

    id: str
    image: np.ndarray
    cand_a: frozenset
    text_a: np.ndarray
    cand_b: frozenset
    text_b: np.ndarray
    gold: Optional[str] = None

    def __post_init__(self):
        self.id = str(self.id)
        self.cand_a = description_key(self.cand_a)
        self.cand_b = description_key(self.cand_b)
        if self.cand_a == self.cand_b:
            raise ValidationError(f"triple {self.id}: both candidates are the same description")
        if self.gold is not None and self.gold not in CANDIDATES:
            raise ValidationError(f"triple {self.id}: gold must be 'A' or 'B', got {self.gold!r}")

    def candidate(self, label):
        return self.cand_a if label == "A" else self.cand_b


@dataclass
class Decision:
    id: str
    chosen: str
    score_a: float
    score_b: float
    method: str
    tie: bool = False

    @property
    def probability(self) -> float:
        """Squared-score ratio with candidate A in the numerator."""
        return pair_probability(self.score_a, self.score_b, warn=False)

    @property
    def degenerate(self) -> bool:
        return self.score_a == 0 and self.score_b == 0

    @property
    def prob_a_correct(self) -> float:
        """Confidence that A is correct, oriented by the decision.

        Under the general method this is ``1 - probability``; link decisions
        keep the same magnitude but side with the propagated choice.
        """
        p = 1.0 - self.probability
        conf = max(p, 1.0 - p)
        return conf if self.chosen == "A" else 1.0 - conf

    def to_record(self):
        return {
            "id": self.id,
            "chosen": self.chosen,
            "score_a": self.score_a,
            "score_b": self.score_b,
            "method": self.method,
            "probability": self.probability,
            "prob_a_correct": self.prob_a_correct,
            "tie": self.tie,
            "degenerate": self.degenerate,
        }

    @classmethod
    def from_record(cls, rec):
        return cls(str(rec["id"]), rec["chosen"], float(rec["score_a"]), float(rec["score_b"]),
                   rec["method"], bool(rec.get("tie", False)))


def pair_dissimilarity(siamese: SiameseParams, image_vec, text_vec):
    """``C**2`` between an image and a description (vectorised over rows)."""
    image_vec = np.asarray(image_vec, dtype=np.float64)
    text_vec = np.asarray(text_vec, dtype=np.float64)
    if image_vec.shape != text_vec.shape:
        raise DimensionError(f"image {image_vec.shape} and text {text_vec.shape} inputs differ")
    c = compatibility(siamese.image_net.encode(image_vec), siamese.text_net.encode(text_vec))
    return c ** 2


def score_triples(triples: Sequence[TestTriple], siamese: SiameseParams) -> Dict[str, Tuple[float, float]]:
    if not triples:
        return {}
    images = np.stack([t.image for t in triples])
    sa = np.atleast_1d(pair_dissimilarity(siamese, images, np.stack([t.text_a for t in triples])))
    sb = np.atleast_1d(pair_dissimilarity(siamese, images, np.stack([t.text_b for t in triples])))
    return {t.id: (float(a), float(b)) for t, a, b in zip(triples, sa, sb)}


def decide(triple_id, score_a, score_b, method="general") -> Decision:
    """Smaller dissimilarity wins; exact ties go to A and are flagged."""
    tie = score_a == score_b
    if tie:
        log.warning("triple %s: tied scores %.6g, choosing A", triple_id, score_a)
    chosen = "A" if score_a <= score_b else "B"
    return Decision(str(triple_id), chosen, float(score_a), float(score_b), method, tie)


def choose_general(triple: TestTriple, siamese: SiameseParams) -> Decision:
    sa = float(pair_dissimilarity(siamese, triple.image, triple.text_a))
    sb = float(pair_dissimilarity(siamese, triple.image, triple.text_b))
    return decide(triple.id, sa, sb)


@dataclass
class LinkGraph:
    cycles: List[Tuple[str, ...]] = field(default_factory=list)
    # Open chains: linked triples whose component has a loose end. They
    # resolve exactly like cycles.
    chains: List[Tuple[str, ...]] = field(default_factory=list)
    edges: Dict[Tuple[str, str], Tuple[str, str]] = field(default_factory=dict)
    unlinked: List[str] = field(default_factory=list)

    @property
    def components(self):
        return list(self.cycles) + list(self.chains)


def _desc_sort_key(desc):
    return tuple(sorted(desc))


def build_link_graph(triples: Sequence[TestTriple]) -> LinkGraph:
    by_id = {}
    for t in triples:
        if t.id in by_id:
            raise DataIntegrityError(f"duplicate triple id {t.id}")
        by_id[t.id] = t
    holders: Dict[frozenset, List[Tuple[str, str]]] = {}
    for t in triples:
        for label in CANDIDATES:
            holders.setdefault(t.candidate(label), []).append((t.id, label))

    edges = {}
    for desc, owners in holders.items():
        if len(owners) >= 3:
            ids = ", ".join(o[0] for o in owners)
            raise DataIntegrityError(
                f"description {' '.join(sorted(desc))!r} appears in {len(owners)} triples ({ids})")
        if len(owners) == 2:
            a, b = owners
            edges[a] = b
            edges[b] = a

    def step(tid, label):
        """Leave ``tid`` through ``label``; return (next id, label used to enter)."""
        return edges[(tid, label)]

    graph = LinkGraph(edges=edges)
    seen = set()
    for start in sorted(by_id):
        if start in seen:
            continue
        linked = [lab for lab in CANDIDATES if (start, lab) in edges]
        if not linked:
            seen.add(start)
            graph.unlinked.append(start)
            continue
        # collect the component
        comp, stack = {start}, [start]
        while stack:
            tid = stack.pop()
            for lab in CANDIDATES:
                if (tid, lab) in edges:
                    nxt = edges[(tid, lab)][0]
                    if nxt not in comp:
                        comp.add(nxt)
                        stack.append(nxt)
        seen |= comp
        degree = {tid: sum((tid, lab) in edges for lab in CANDIDATES) for tid in comp}
        is_cycle = all(d == 2 for d in degree.values())
        if is_cycle:
            first = min(comp)
            t0 = by_id[first]
            # leave toward the smaller neighbour; a 2-cycle falls back to description order
            out = min(CANDIDATES, key=lambda lab: (edges[(first, lab)][0], _desc_sort_key(t0.candidate(lab))))
        else:
            first = min(tid for tid, d in degree.items() if d == 1)
            out = next(lab for lab in CANDIDATES if (first, lab) in edges)
        order = [first]
        tid, lab = first, out
        while True:
            nxt, entered = step(tid, lab)
            if nxt == first:
                break
            order.append(nxt)
            lab = _other(entered)
            tid = nxt
            if (tid, lab) not in edges:
                break
        (graph.cycles if is_cycle else graph.chains).append(tuple(order))
    return graph


def resolve_from_scores(graph: LinkGraph, triples: Sequence[TestTriple],
                        scores: Mapping[str, Tuple[float, float]]) -> List[Decision]:
    """Link-strategy decisions given precomputed ``(score_a, score_b)`` per id."""
    decisions = {}
    for comp in graph.components:
        gaps = [(scores[tid][0] - scores[tid][1]) ** 2 for tid in comp]
        anchor = comp[int(np.argmax(gaps))]
        first = decide(anchor, *scores[anchor], method="link")
        chosen = {anchor: first.chosen}
        queue = [anchor]
        while queue:
            tid = queue.pop()
            for lab in CANDIDATES:
                if (tid, lab) not in graph.edges:
                    continue
                other, other_lab = graph.edges[(tid, lab)]
                # a shared description is correct for exactly one of its two holders
                want = _other(other_lab) if chosen[tid] == lab else other_lab
                if other in chosen:
                    if chosen[other] != want:
                        raise DataIntegrityError(f"link containing {anchor} cannot be resolved consistently at {other}")
                    continue
                chosen[other] = want
                queue.append(other)
        for tid in comp:
            d = first if tid == anchor else Decision(tid, chosen[tid], *scores[tid], "link")
            decisions[tid] = d
    for tid in graph.unlinked:
        decisions[tid] = decide(tid, *scores[tid])
    missing = [t.id for t in triples if t.id not in decisions]
    if missing:
        raise DataIntegrityError(f"link graph does not cover triples {missing[:5]}")
    return [decisions[t.id] for t in triples]


def resolve_links(graph: LinkGraph, triples: Sequence[TestTriple], siamese: SiameseParams) -> List[Decision]:
    return resolve_from_scores(graph, triples, score_triples(triples, siamese))


def choose_all(triples: Sequence[TestTriple], siamese: SiameseParams, strategy="general") -> List[Decision]:
    scores = score_triples(triples, siamese)
    if strategy == "general":
        return [decide(t.id, *scores[t.id]) for t in triples]
    if strategy == "link":
        return resolve_from_scores(build_link_graph(triples), triples, scores)
    raise ValidationError(f"unknown strategy {strategy!r}")


def pair_probability(s1: float, s2: float, warn=True) -> float:
    """``s1**2 / (s1**2 + s2**2)``; both zero gives 0.5."""
    if s1 < 0 or s2 < 0:
        raise ValidationError("dissimilarities must be non-negative")
    top = max(s1, s2)
    if top == 0:
        if warn:
            warnings.warn("both dissimilarities are zero; probability set to 0.5", RuntimeWarning)
        return 0.5
    a, b = s1 / top, s2 / top
    return a * a / (a * a + b * b)


def auc(scores, labels=None) -> float:
    """Mann-Whitney AUC; ties between a positive and a negative count 1/2.

    Takes either ``(score, label)`` pairs or two parallel sequences.
    """
    if labels is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        labels = [l for _, l in pairs]
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))
