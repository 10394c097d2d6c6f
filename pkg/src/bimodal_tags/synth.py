"""Synthetic bimodal corpus with the cyclic test-set property.

Images and tag lists are drawn from matched latent clusters. Each cluster
has a color pair, a stripe orientation and frequency, an organizer-feature
centroid and a word pool. In the test set every incorrect description is
the correct description of exactly one other test image from a different
cluster, wired through a derangement.
"""

import colorsys
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .numeric import make_rng
from .pipeline import PipelineConfig, write_manifest
from .siamese import derange_pairs

WORDS_PER_CLUSTER = 12
SHARED_WORDS = 30
ORGANIZER_RAW_DIM = 816

log = logging.getLogger(__name__)


@dataclass
class SyntheticCorpus:
    root: Path
    config: Path
    train_manifest: Path
    test_manifest: Path
    organizer_train: Path
    organizer_test: Path


def _cluster_style(k, n_clusters, rng):
    hue = k / n_clusters
    base = np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.9)) * 255
    accent = np.array(colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.6, 0.35)) * 255
    return {
        "base": base,
        "accent": accent,
        "angle": np.pi * k / n_clusters,
        "freq": 2.0 + 2.0 * (k % 3),
        "centroid": rng.normal(0.0, 1.0, size=ORGANIZER_RAW_DIM // 2),
        "words": [f"c{k}w{j:02d}" for j in range(WORDS_PER_CLUSTER)],
    }


def _render(style, size, noise, rng):
    y, x = np.mgrid[0:size, 0:size] / size
    phase = rng.uniform(0, 2 * np.pi)
    proj = x * np.cos(style["angle"]) + y * np.sin(style["angle"])
    mix = 0.5 + 0.5 * np.sin(2 * np.pi * style["freq"] * proj + phase)
    img = style["base"] * mix[..., None] + style["accent"] * (1 - mix[..., None])
    img = img + noise * 60.0 * rng.normal(size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def _tags(style, noise, rng, shared):
    k = int(rng.integers(3, 6))
    words = list(rng.choice(style["words"], size=k, replace=False))
    for i in range(k):
        if rng.random() < 0.5 * noise:
            words[i] = shared[int(rng.integers(len(shared)))]
    return sorted(set(words))


def _organizer(style, noise, rng):
    row = np.zeros(ORGANIZER_RAW_DIM)
    row[0::2] = style["centroid"] + noise * rng.normal(size=ORGANIZER_RAW_DIM // 2)
    return row


def cross_cluster_derangement(labels, rng, attempts=2000):
    """Derangement that never maps an index to one with the same label.

    Rejection sampling keeps the draw uniform when that is cheap; otherwise
    the indices are grouped by label and shifted by the largest group size.
    When one label covers more than half the items the constraint cannot
    hold and a plain derangement is returned.
    """
    labels = np.asarray(labels)
    n = labels.size
    for _ in range(attempts):
        perm = derange_pairs(n, rng)
        if not np.any(labels[perm] == labels):
            return perm
    groups = [rng.permutation(np.flatnonzero(labels == k)) for k in rng.permutation(np.unique(labels))]
    shift = max(g.size for g in groups)
    if 2 * shift > n:
        log.warning("one cluster holds most test images; wrong descriptions may share its cluster")
        return derange_pairs(n, rng)
    order = np.concatenate(groups)
    perm = np.empty(n, dtype=np.int64)
    perm[order] = order[(np.arange(n) + shift) % n]
    return perm


def generate_synthetic(out_dir, n_pairs=200, n_test=None, n_clusters=8, noise=0.3, seed=0,
                       image_size=32, config_overrides=None) -> SyntheticCorpus:
    """Write images, manifests, organizer files and a config under ``out_dir``."""
    n_test = max(4, n_pairs // 5) if n_test is None else n_test
    if n_pairs < 4 or n_test < 4:
        raise ValidationError("need at least 4 training pairs and 4 test triples")
    if n_clusters < 2:
        raise ValidationError("need at least 2 clusters")
    if noise < 0:
        raise ValidationError("noise level must be non-negative")
    if image_size < 8:
        raise ValidationError("images must be at least 8x8")
    from PIL import Image

    rng = make_rng(seed)
    root = Path(out_dir)
    img_dir = root / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    styles = [_cluster_style(k, n_clusters, rng) for k in range(n_clusters)]
    shared = [f"misc{j:02d}" for j in range(SHARED_WORDS)]

    def make_image(name, style):
        Image.fromarray(_render(style, image_size, noise, rng)).save(img_dir / name)
        return f"images/{name}"

    train_recs, org_train = [], []
    for i in range(n_pairs):
        style = styles[int(rng.integers(n_clusters))]
        rid = f"tr{i:05d}"
        train_recs.append({"id": rid, "image": make_image(f"{rid}.png", style),
                           "tags": _tags(style, noise, rng, shared)})
        org_train.append(_organizer(style, noise, rng))

    test_styles, test_labels, correct, org_test, seen = [], [], [], [], set()
    for i in range(n_test):
        label = int(rng.integers(n_clusters))
        style = styles[label]
        for _ in range(1000):
            desc = _tags(style, noise, rng, shared)
            if tuple(desc) not in seen:
                break
        else:
            raise ValidationError("could not draw distinct test descriptions; use more clusters")
        seen.add(tuple(desc))
        test_styles.append(style)
        test_labels.append(label)
        correct.append(desc)
        org_test.append(_organizer(style, noise, rng))

    perm = cross_cluster_derangement(test_labels, rng)
    test_recs = []
    for i, style in enumerate(test_styles):
        rid = f"te{i:05d}"
        right, wrong = correct[i], correct[perm[i]]
        gold = "A" if rng.random() < 0.5 else "B"
        a, b = (right, wrong) if gold == "A" else (wrong, right)
        test_recs.append({"id": rid, "image": make_image(f"{rid}.png", style), "a": a, "b": b, "gold": gold})

    paths = SyntheticCorpus(
        root=root,
        config=root / "config.json",
        train_manifest=root / "train.jsonl",
        test_manifest=root / "test.jsonl",
        organizer_train=root / "organizer_train.txt",
        organizer_test=root / "organizer_test.txt",
    )
    write_manifest(paths.train_manifest, train_recs)
    write_manifest(paths.test_manifest, test_recs)
    np.savetxt(paths.organizer_train, np.array(org_train), fmt="%.17g")
    np.savetxt(paths.organizer_test, np.array(org_test), fmt="%.17g")
    cfg = {
        "train_manifest": paths.train_manifest.name,
        "test_manifest": paths.test_manifest.name,
        "organizer_train": paths.organizer_train.name,
        "organizer_test": paths.organizer_test.name,
        "seed": seed,
        **desk_defaults(),
        **(config_overrides or {}),
    }
    PipelineConfig.from_dict(cfg, base=root).save(paths.config)
    return paths


def desk_defaults():
    """Training schedule sized for a few-hundred-pair synthetic run."""
    return {
        "image_rbm": [{"epochs": 20, "epsilon": 0.001, "batch_size": 16},
                      {"epochs": 50, "epsilon": 0.01, "batch_size": 16}],
        "text_rbm": [{"epochs": 300, "epsilon": 0.01, "batch_size": 16},
                     {"epochs": 50, "epsilon": 0.01, "batch_size": 16}],
        "siamese": {"epochs": 30, "learning_rate": 5e-5, "momentum": 0.9, "batch_size": 64},
    }
