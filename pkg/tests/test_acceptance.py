"""Acceptance criteria, one test each.

Every test records a ``PASS``/``FAIL`` line; the lines are printed in the
pytest terminal summary, or directly when this file is run as a script.
"""

import itertools
import sys
import time

import numpy as np
import pytest

import helpers
from bimodal_tags.chooser import auc, build_link_graph, decide, resolve_from_scores
from bimodal_tags.image_features import combine_image_features, extract_image_features, mpeg7_descriptors, gist
from bimodal_tags.numeric import finite_diff_grad, make_rng, sigmoid
from bimodal_tags.pipeline import PipelineConfig, run_all
from bimodal_tags.rbm import CdConfig, RbmParams, hidden_activation, train_rbm, train_stack, visible_activation
from bimodal_tags.siamese import (
    LossConfig, PairedBatch, SiameseParams, contrastive_loss, gradient, objective, per_sample_losses)
from bimodal_tags.synth import generate_synthetic
from bimodal_tags.text_features import Vocabulary, encode_bow

END_TO_END_SEED = 0


def record(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    helpers.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_headline_numbers_substituted():
    line = ("SKIP  headline leaderboard numbers: not reproducible without the original image/tag corpora; "
            "covered by the property criteria below")
    helpers.ACCEPTANCE_LINES.append(line)
    print(line)
    pytest.skip("original benchmark data unavailable")


def test_gradient_oracle():
    start = time.perf_counter()
    worst, done = 0.0, 0
    for seed in itertools.count():
        rng = make_rng(seed, 2024)
        params = SiameseParams.initialize(6, 4, rng)
        batch = PairedBatch(rng.random((4, 6)), rng.random((4, 6)), np.array([1.0, 0.0, 1.0, 0.0]))
        codes = params.image_net.encode(batch.P) - params.text_net.encode(batch.Q)
        if np.abs(codes).min() < 1e-6:
            continue  # L1 kink within reach of the difference step
        cfg = LossConfig()
        fd = finite_diff_grad(lambda th: objective(params.with_vector(th), batch, cfg), params.to_vector())
        bp = gradient(params, batch, cfg).to_vector()
        worst = max(worst, np.linalg.norm(bp - fd) / max(np.linalg.norm(bp), np.linalg.norm(fd)))
        done += 1
        if done == 20:
            break
    elapsed = time.perf_counter() - start
    record("gradient oracle", worst <= 1e-5 and elapsed < 30,
           f"worst relative error {worst:.2e} over 20 instances (<= 1e-5), {elapsed:.2f} s (< 30 s)")


def test_boltzmann_consistency():
    rng = make_rng(31)
    states = list(itertools.product([0, 1], repeat=2))
    worst = 0.0
    for _ in range(50):
        W, b, c = rng.normal(size=(2, 2)), rng.normal(size=2), rng.normal(size=2)
        params = RbmParams(W=W, b=b, c=c)
        weight = {(v, h): np.exp(np.array(v) @ W @ np.array(h) + b @ np.array(v) + c @ np.array(h))
                  for v in states for h in states}
        for v in states:
            z = sum(weight[v, h] for h in states)
            for j in range(2):
                exact = sum(weight[v, h] for h in states if h[j]) / z
                worst = max(worst, abs(hidden_activation(params, v)[j] - exact))
        for h in states:
            z = sum(weight[v, h] for v in states)
            for i in range(2):
                exact = sum(weight[v, h] for v in states if v[i]) / z
                worst = max(worst, abs(visible_activation(params, h)[i] - exact))
    record("Boltzmann consistency", worst <= 1e-10, f"max deviation {worst:.2e} over 50 random 2x2 RBMs (<= 1e-10)")


def test_cd_learning_signal():
    data = np.repeat(np.array([[1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1]], float), 10, axis=0)
    start = time.perf_counter()
    drops = []
    for seed in range(5):
        _, hist = train_rbm(data, 4, "bernoulli", CdConfig(epochs=200, batch_size=10), make_rng(seed))
        drops.append(1 - hist[-1] / hist[0])
    elapsed = time.perf_counter() - start
    ok = all(d >= 0.5 for d in drops) and elapsed < 10
    record("CD learning signal", ok,
           f"cross-entropy drop per seed {[round(d, 3) for d in drops]} (each >= 0.5), {elapsed:.2f} s (< 10 s)")


def test_replicated_softmax_m_scaling():
    c = make_rng(5).normal(size=8)
    ok = True
    for M in (1, 2, 5):
        params = RbmParams(W=np.zeros((6, 8)), b=np.zeros(6), c=c, variant="replicated_softmax")
        v = np.zeros(6)
        v[:M] = 1
        ok &= bool(np.array_equal(hidden_activation(params, v, M=M), sigmoid(M * c)))
    record("replicated-softmax M scaling", ok, "hidden_activation at W=0 equals sigmoid(M*c) exactly for M in {1, 2, 5}")


def test_loss_algebra():
    rng = make_rng(17)
    params = SiameseParams.initialize(6, 4, rng)
    cfg = LossConfig()
    batch = PairedBatch(rng.random((1000, 6)), rng.random((1000, 6)), (rng.random(1000) < 0.5).astype(float))
    l_i, l_t, l_c, total = per_sample_losses(params, batch, cfg)
    gap = float(np.abs(total - (cfg.alpha * (l_i + l_t) + (1 - cfg.alpha) * l_c)).max())
    spots = contrastive_loss(2.0, 1) == 4.0 and contrastive_loss(0.0, 0) == 1.0
    record("loss algebra", gap <= 1e-12 and spots,
           f"decomposition max gap {gap:.1e} on 1000 samples (<= 1e-12); L_C(I=1,C=2)=4 and L_C(I=0,C=0)=1 exact: {spots}")


def test_link_resolution_theorem():
    start = time.perf_counter()
    qualifying, link_perfect, dominated, general_below_one = 0, 0, 0, 0
    for k in range(100):
        triples, scores, cycles = helpers.planted_link_set(make_rng(k, 606), n=60)
        link = resolve_from_scores(build_link_graph(triples), triples, scores)
        general = [decide(t.id, *scores[t.id]) for t in triples]
        acc_link, acc_general = helpers.accuracy(link, triples), helpers.accuracy(general, triples)
        if helpers.anchors_correct(triples, scores, cycles):
            qualifying += 1
            link_perfect += acc_link == 1.0
        dominated += acc_link >= acc_general
        general_below_one += acc_general < 1.0
    elapsed = time.perf_counter() - start
    ok = link_perfect == qualifying and dominated == 100 and elapsed < 60
    record("link-resolution theorem", ok,
           f"link accuracy 1.0 in {link_perfect}/{qualifying} sets with correct anchors; link >= general in "
           f"{dominated}/100; general < 1.0 in {general_below_one}/100; {elapsed:.2f} s (< 60 s)")


def test_dimensional_contract():
    rng = make_rng(9)
    img = rng.integers(0, 256, size=(48, 64, 3)).astype(np.uint8)
    full = combine_image_features(rng.normal(size=408), mpeg7_descriptors(img), gist(img))
    lite = extract_image_features(img)
    layout = [(s.name, s.length) for s in full.layout]
    vocab = Vocabulary(tuple(f"w{i}" for i in range(4000)))
    cfg = [CdConfig(epochs=1, batch_size=8)] * 2
    image_stack = train_stack(rng.normal(size=(8, 1704)), [1024, 1024], "gaussian", cfg, rng)
    bow = np.zeros((8, 4000))
    bow[np.arange(8), rng.integers(0, 4000, 8)] = 1
    text_stack = train_stack(bow, [1024, 1024], "replicated_softmax", cfg, rng)
    shapes = [tuple(p.W.shape) for p in image_stack + text_stack]
    ok = (full.values.size == 1704 and lite.values.size == 1296
          and layout == [("organizer", 408), ("mpeg7", 784), ("gist", 512)]
          and encode_bow(["w1", "w9"], vocab).size == 4000
          and shapes == [(1704, 1024), (1024, 1024), (4000, 1024), (1024, 1024)])
    record("dimensional contract", ok,
           f"image {full.values.size}/{lite.values.size} with layout {layout}; bow 4000; stacks {shapes}")


def test_auc_oracle():
    rng = make_rng(44)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 80))
        scores = np.round(rng.random(n), 1)  # coarse grid forces ties
        labels = rng.integers(0, 2, n)
        labels[:2] = [0, 1]
        pos, neg = scores[labels == 1], scores[labels == 0]
        brute = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg) / (len(pos) * len(neg))
        worst = max(worst, abs(auc(scores, labels) - brute))
    record("AUC oracle equivalence", worst <= 1e-12, f"max deviation {worst:.1e} over 100 tied instances (<= 1e-12)")


def _artifact_bytes(root):
    out = {}
    for stage in ("features", "vocab", "rbm", "siamese", "choose", "evaluate"):
        for p in sorted((root / stage).iterdir()):
            out[f"{stage}/{p.name}"] = p.read_bytes()
    return out


@pytest.mark.slow
def test_end_to_end_desk_run(tmp_path):
    runs = []
    for name in ("first", "second"):
        start = time.perf_counter()
        corpus = generate_synthetic(tmp_path / name, n_pairs=200, n_test=40, n_clusters=8, noise=0.3,
                                    seed=END_TO_END_SEED)
        metrics = run_all(PipelineConfig.load(corpus.config), corpus.root, strategies=["general", "link"])
        runs.append((time.perf_counter() - start, metrics, _artifact_bytes(corpus.root)))
    (t1, m1, b1), (t2, _, b2) = runs
    general, link = m1["general"]["accuracy"], m1["link"]["accuracy"]
    same = b1 == b2
    ok = max(t1, t2) < 300 and general >= 0.8 and link >= general and same
    record("end-to-end desk run", ok,
           f"general {general:.3f} (>= 0.8), link {link:.3f} (>= general), runs {t1:.0f} s / {t2:.0f} s (< 300 s), "
           f"{len(b1)} artifacts byte-identical: {same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
