"""Manifests, configuration, stage orchestration and evaluation.

A workspace holds one subdirectory per stage::

    features/  vocab/  rbm/  siamese/  choose/  evaluate/

Every stage reads the artifacts of earlier stages and refuses to
overwrite its own unless ``force`` is set.
"""

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import image_features as imf
from .binio import load_matrix, save_matrix
from .chooser import Decision, TestTriple, auc, choose_all
from .errors import (AlignmentError, ArtifactExistsError, OrderingError, ParseError,
                     UndefinedAUCError, ValidationError)
from .numeric import make_rng
from .rbm import CdConfig, Variant, save_rbm, stack_transform, train_stack
from .siamese import (SiameseParams, TrainConfig, compatibility, derange_pairs, load_siamese,
                      save_siamese, train)
from .text_features import build_vocabulary, encode_bow_matrix, normalize_tags

log = logging.getLogger(__name__)

STAGES = ("features", "vocab", "rbm", "siamese", "choose", "evaluate")
STRATEGIES = ("general", "link")


# --- manifests ------------------------------------------------------------------

@dataclass
class TrainRecord:
    id: str
    image: Path
    tags: List[str]


@dataclass
class TestRecord:
    __test__ = False

    id: str
    image: Path
    a: List[str]
    b: List[str]
    gold: Optional[str] = None


@dataclass
class Manifest:
    kind: str
    records: list

    def __len__(self):
        return len(self.records)

    @property
    def ids(self):
        return [r.id for r in self.records]


def _tag_field(obj, key, lineno):
    if key not in obj:
        raise ParseError(f"missing field {key!r}", lineno)
    val = obj[key]
    if isinstance(val, str):
        return normalize_tags(val)
    if isinstance(val, list) and all(isinstance(x, str) for x in val):
        return normalize_tags(val)
    raise ParseError(f"field {key!r} must be a string or a list of strings", lineno)


def ingest(path, kind: Optional[str] = None) -> Manifest:
    """Read a line-delimited JSON manifest.

    Training lines: ``{"id", "image", "tags"}``. Test lines:
    ``{"id", "image", "a", "b", "gold"?}``. Image paths are relative to
    the manifest's directory. ``kind`` is inferred from the first record
    when omitted.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest {path} does not exist")
    base = path.parent
    records, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON ({exc.msg})", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("record must be a JSON object", lineno)
            if kind is None:
                kind = "test" if ("a" in obj or "b" in obj) else "train"
            for key in ("id", "image"):
                if key not in obj:
                    raise ParseError(f"missing field {key!r}", lineno)
            rid = str(obj["id"])
            if rid in seen:
                raise ParseError(f"duplicate id {rid!r}", lineno)
            seen.add(rid)
            image = base / obj["image"]
            if not image.exists():
                raise ParseError(f"image file {image} not found", lineno)
            if kind == "train":
                records.append(TrainRecord(rid, image, _tag_field(obj, "tags", lineno)))
            else:
                gold = obj.get("gold")
                if gold is not None and gold not in ("A", "B"):
                    raise ParseError(f"gold must be 'A' or 'B', got {gold!r}", lineno)
                records.append(TestRecord(rid, image, _tag_field(obj, "a", lineno),
                                          _tag_field(obj, "b", lineno), gold))
    if not records:
        raise ValidationError(f"manifest {path} has no records")
    return Manifest(kind, records)


def write_manifest(path, records: Sequence[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# --- configuration --------------------------------------------------------------

def _cd_list(raw, variant_first):
    defaults = [CdConfig.default_for(variant_first), CdConfig.default_for(Variant.BERNOULLI)]
    if raw is None:
        return defaults
    if len(raw) != 2:
        raise ValidationError("RBM config needs one entry per stacked layer")
    return [CdConfig(**{**asdict(d), **r}) for d, r in zip(defaults, raw)]


@dataclass
class PipelineConfig:
    train_manifest: Path
    test_manifest: Path
    organizer_train: Optional[Path] = None
    organizer_test: Optional[Path] = None
    vocab_size: int = 4000
    image_layers: List[int] = field(default_factory=lambda: [1024, 1024])
    text_layers: List[int] = field(default_factory=lambda: [1024, 1024])
    image_rbm: List[CdConfig] = field(default_factory=lambda: _cd_list(None, Variant.GAUSSIAN))
    text_rbm: List[CdConfig] = field(default_factory=lambda: _cd_list(None, Variant.REPLICATED_SOFTMAX))
    siamese: TrainConfig = field(default_factory=TrainConfig)
    code_dim: int = 512
    strategy: str = "general"
    seed: int = 0
    # Fraction of training pairs held out from siamese training and
    # reported as validation statistics; 0 trains on everything.
    validation_fraction: float = 0.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValidationError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if len(self.image_layers) != 2 or len(self.text_layers) != 2:
            raise ValidationError("each modality stacks exactly two RBMs")
        if self.image_layers[-1] != self.text_layers[-1]:
            raise ValidationError("both stacks must end in the same width (the siamese input)")
        if (self.organizer_train is None) != (self.organizer_test is None):
            raise ValidationError("organizer features need both a train and a test file")
        if not 0 <= self.validation_fraction < 1:
            raise ValidationError("validation_fraction must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d, base: Path = Path(".")):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        for key in ("train_manifest", "test_manifest", "organizer_train", "organizer_test"):
            if d.get(key) is not None:
                d[key] = base / d[key]
        d["image_rbm"] = _cd_list(d.get("image_rbm"), Variant.GAUSSIAN)
        d["text_rbm"] = _cd_list(d.get("text_rbm"), Variant.REPLICATED_SOFTMAX)
        if "siamese" in d:
            d["siamese"] = TrainConfig.from_dict(d["siamese"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base=path.parent)

    def to_dict(self, base: Optional[Path] = None):
        d = asdict(self)
        for key in ("train_manifest", "test_manifest", "organizer_train", "organizer_test"):
            if d[key] is not None:
                p = Path(d[key])
                d[key] = str(p.relative_to(base)) if base is not None else str(p)
        return d

    def save(self, path):
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(base=path.parent), fh, indent=2, sort_keys=True)
            fh.write("\n")


# --- workspace helpers ----------------------------------------------------------

class Workspace:
    def __init__(self, root):
        self.root = Path(root)

    def stage_dir(self, stage, create=False):
        d = self.root / stage
        if create:
            d.mkdir(parents=True, exist_ok=True)
        return d

    def path(self, stage, name):
        return self.root / stage / name

    def require(self, stage, name, needed_by):
        p = self.path(stage, name)
        if not p.exists():
            raise OrderingError(f"{needed_by} needs {stage}/{name}; run the `{stage}` stage first")
        return p

    def claim(self, stage, names, force):
        """Create the stage directory and refuse to clobber unless ``force``."""
        self.stage_dir(stage, create=True)
        existing = [n for n in names if self.path(stage, n).exists()]
        if existing and not force:
            raise ArtifactExistsError(f"{stage}/{existing[0]} already exists; pass --force to overwrite")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_delimited(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    delimiter = "," if "," in first else ("\t" if "\t" in first else None)
    return np.atleast_2d(np.loadtxt(path, delimiter=delimiter, dtype=np.float64))


# --- stages ---------------------------------------------------------------------

STAGE_KEYS = {name: i for i, name in enumerate(STAGES)}


def _image_matrix(manifest: Manifest, organizer: Optional[np.ndarray]):
    rows = []
    layout = None
    for i, rec in enumerate(manifest.records):
        img = imf.load_image(rec.image)
        org = organizer[i] if organizer is not None else None
        fv = imf.extract_image_features(img, org)
        layout = fv.layout
        rows.append(fv.values)
    return np.stack(rows), layout


def stage_features(cfg: PipelineConfig, ws: Workspace, force=False):
    outputs = ["train_images.mat", "test_images.mat", "layout.json"]
    ws.claim("features", outputs, force)
    train_m = ingest(cfg.train_manifest, "train")
    test_m = ingest(cfg.test_manifest, "test")
    org_train = org_test = None
    kept = None
    if cfg.organizer_train is not None:
        raw_train = load_delimited(cfg.organizer_train)
        raw_test = load_delimited(cfg.organizer_test)
        for raw, m, name in ((raw_train, train_m, "train"), (raw_test, test_m, "test")):
            if raw.shape[0] != len(m):
                raise AlignmentError(f"organizer {name} file has {raw.shape[0]} rows, manifest has {len(m)}")
        org_train, kept = imf.prune_zero_columns(raw_train, expected_kept=imf.ORGANIZER_DIM)
        org_test = raw_test[:, kept]
    train_x, layout = _image_matrix(train_m, org_train)
    test_x, _ = _image_matrix(test_m, org_test)
    save_matrix(ws.path("features", "train_images.mat"), train_x)
    save_matrix(ws.path("features", "test_images.mat"), test_x)
    _write_json(ws.path("features", "layout.json"), {
        "segments": [asdict(s) for s in layout],
        "organizer_kept_columns": kept,
        "train_ids": train_m.ids,
        "test_ids": test_m.ids,
    })
    log.info("features: train %s, test %s", train_x.shape, test_x.shape)


def stage_vocab(cfg: PipelineConfig, ws: Workspace, force=False):
    outputs = ["vocabulary.txt", "train_bow.mat", "test_bow_a.mat", "test_bow_b.mat"]
    ws.claim("vocab", outputs, force)
    train_m = ingest(cfg.train_manifest, "train")
    test_m = ingest(cfg.test_manifest, "test")
    vocab = build_vocabulary([r.tags for r in train_m.records], cfg.vocab_size)
    vocab.save(ws.path("vocab", "vocabulary.txt"))
    save_matrix(ws.path("vocab", "train_bow.mat"), encode_bow_matrix([r.tags for r in train_m.records], vocab))
    save_matrix(ws.path("vocab", "test_bow_a.mat"), encode_bow_matrix([r.a for r in test_m.records], vocab))
    save_matrix(ws.path("vocab", "test_bow_b.mat"), encode_bow_matrix([r.b for r in test_m.records], vocab))
    log.info("vocab: %d words", len(vocab))


RBM_FILES = ["image_1.rbm", "image_2.rbm", "text_1.rbm", "text_2.rbm"]
LEVEL2_FILES = ["train_image.mat", "train_text.mat", "test_image.mat", "test_text_a.mat", "test_text_b.mat"]


def stage_rbm(cfg: PipelineConfig, ws: Workspace, force=False):
    ws.claim("rbm", RBM_FILES + LEVEL2_FILES, force)
    train_x = load_matrix(ws.require("features", "train_images.mat", "rbm"))
    test_x = load_matrix(ws.require("features", "test_images.mat", "rbm"))
    train_bow = load_matrix(ws.require("vocab", "train_bow.mat", "rbm"))
    test_a = load_matrix(ws.require("vocab", "test_bow_a.mat", "rbm"))
    test_b = load_matrix(ws.require("vocab", "test_bow_b.mat", "rbm"))
    rng = make_rng(cfg.seed, STAGE_KEYS["rbm"])
    image_stack = train_stack(train_x, cfg.image_layers, Variant.GAUSSIAN, cfg.image_rbm, rng)
    keep = train_bow.sum(axis=1) >= 1
    if not np.all(keep):
        log.warning("rbm: %d training tag sets have no in-vocabulary word; skipped for the text stack",
                    int((~keep).sum()))
    text_stack = train_stack(train_bow[keep], cfg.text_layers, Variant.REPLICATED_SOFTMAX, cfg.text_rbm, rng)
    for name, params in zip(RBM_FILES, image_stack + text_stack):
        save_rbm(ws.path("rbm", name), params)
    level2 = [
        stack_transform(image_stack, train_x),
        stack_transform(text_stack, train_bow),
        stack_transform(image_stack, test_x),
        stack_transform(text_stack, test_a),
        stack_transform(text_stack, test_b),
    ]
    for name, mat in zip(LEVEL2_FILES, level2):
        save_matrix(ws.path("rbm", name), mat)


def stage_siamese(cfg: PipelineConfig, ws: Workspace, force=False):
    ws.claim("siamese", ["siamese.siam", "history.jsonl"], force)
    P = load_matrix(ws.require("rbm", "train_image.mat", "siamese"))
    Q = load_matrix(ws.require("rbm", "train_text.mat", "siamese"))
    rng = make_rng(cfg.seed, STAGE_KEYS["siamese"])
    n = P.shape[0]
    order = np.arange(n)
    n_val = int(round(cfg.validation_fraction * n))
    if n_val:
        order = rng.permutation(n)
    train_idx, val_idx = order[n_val:], order[:n_val]
    init = SiameseParams.initialize(P.shape[1], cfg.code_dim, rng)
    params, history = train(init, P[train_idx], Q[train_idx], cfg.siamese, rng)
    save_siamese(ws.path("siamese", "siamese.siam"), params)
    records = [{"epoch": i, **asdict(h.breakdown), "mean_c_positive": h.mean_c_positive,
                "mean_c_negative": h.mean_c_negative} for i, h in enumerate(history)]
    if n_val >= 2:
        f = params.image_net.encode(P[val_idx])
        perm = derange_pairs(n_val, rng)
        records.append({
            "validation": True,
            "mean_c_positive": float(np.mean(compatibility(f, params.text_net.encode(Q[val_idx])))),
            "mean_c_negative": float(np.mean(compatibility(f, params.text_net.encode(Q[val_idx][perm])))),
        })
    _write_jsonl(ws.path("siamese", "history.jsonl"), records)


def load_test_triples(cfg: PipelineConfig, ws: Workspace, needed_by="choose") -> List[TestTriple]:
    test_m = ingest(cfg.test_manifest, "test")
    images = load_matrix(ws.require("rbm", "test_image.mat", needed_by))
    text_a = load_matrix(ws.require("rbm", "test_text_a.mat", needed_by))
    text_b = load_matrix(ws.require("rbm", "test_text_b.mat", needed_by))
    if images.shape[0] != len(test_m):
        raise AlignmentError("level-2 test matrices do not match the test manifest")
    return [TestTriple(r.id, images[i], r.a, text_a[i], r.b, text_b[i], r.gold)
            for i, r in enumerate(test_m.records)]


def stage_choose(cfg: PipelineConfig, ws: Workspace, force=False):
    name = f"decisions_{cfg.strategy}.jsonl"
    siam_path = ws.require("siamese", "siamese.siam", "choose")
    ws.claim("choose", [name], force)
    params = load_siamese(siam_path)
    triples = load_test_triples(cfg, ws)
    decisions = choose_all(triples, params, cfg.strategy)
    _write_jsonl(ws.path("choose", name), [d.to_record() for d in decisions])


def evaluate(decisions: Sequence[Decision], gold: Dict[str, str]) -> dict:
    """Accuracy of ``chosen`` and AUC of ``prob_a_correct`` against gold labels."""
    ids = [d.id for d in decisions]
    if set(ids) != set(gold) or len(ids) != len(gold):
        missing = sorted(set(gold) ^ set(ids))[:5]
        raise AlignmentError(f"decision ids do not match gold ids (e.g. {missing})")
    correct = [d.chosen == gold[d.id] for d in decisions]
    try:
        area = auc([d.prob_a_correct for d in decisions], [gold[d.id] == "A" for d in decisions])
    except UndefinedAUCError:
        log.warning("evaluate: gold labels are single-class; AUC undefined")
        area = None
    return {"accuracy": float(np.mean(correct)), "auc": area, "n": len(decisions)}


def stage_evaluate(cfg: PipelineConfig, ws: Workspace, force=False):
    name = f"metrics_{cfg.strategy}.jsonl"
    dec_path = ws.require("choose", f"decisions_{cfg.strategy}.jsonl", "evaluate")
    ws.claim("evaluate", [name], force)
    decisions = [Decision.from_record(r) for r in _read_jsonl(dec_path)]
    test_m = ingest(cfg.test_manifest, "test")
    gold = {r.id: r.gold for r in test_m.records}
    if any(g is None for g in gold.values()):
        raise ValidationError("evaluate needs gold labels for every test triple")
    metrics = {"strategy": cfg.strategy, **evaluate(decisions, gold)}
    _write_jsonl(ws.path("evaluate", name), [metrics])
    return metrics


STAGE_FUNCS = {
    "features": stage_features,
    "vocab": stage_vocab,
    "rbm": stage_rbm,
    "siamese": stage_siamese,
    "choose": stage_choose,
    "evaluate": stage_evaluate,
}


def run_stage(stage: str, cfg: PipelineConfig, workspace, force=False):
    if stage not in STAGE_FUNCS:
        raise ValidationError(f"unknown stage {stage!r}")
    log.info("stage %s", stage)
    return STAGE_FUNCS[stage](cfg, Workspace(workspace), force)


def run_all(cfg: PipelineConfig, workspace, force=False, strategies=None):
    """Every stage in order; ``choose``/``evaluate`` once per strategy."""
    for stage in STAGES[:4]:
        run_stage(stage, cfg, workspace, force)
    results = {}
    for strategy in strategies or [cfg.strategy]:
        scfg = PipelineConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)}, "strategy": strategy})
        run_stage("choose", scfg, workspace, force)
        results[strategy] = run_stage("evaluate", scfg, workspace, force)
    return results
