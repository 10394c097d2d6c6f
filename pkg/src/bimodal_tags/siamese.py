"""Quasi-Siamese autoencoder over the two level-2 representations.

Each modality has its own encoder/decoder (same shapes, separate weights).
The code layers are compared with an L1 distance, the *compatibility*
``C``. Per pair the loss is

    alpha * (|p - p_hat|^2 + |q - q_hat|^2)
        + (1 - alpha) * (I * C^2 + (1 - I) * exp(-lam * C))

with ``I = 1`` for a matching image/tag pair and ``I = 0`` otherwise.
"""

import logging
from dataclasses import dataclass, field, fields
from typing import List, Optional

import numpy as np

from .binio import Reader, Writer
from .errors import DimensionError, NumericError, TrainingDivergenceError, ValidationError
from .numeric import make_rng, sigmoid

log = logging.getLogger(__name__)

INPUT_DIM = 1024
CODE_DIM = 512
ALPHA = 0.5
LAMBDA = 0.2


@dataclass
class Subnet:
    W_enc: np.ndarray   # (n_in, n_code)
    b_enc: np.ndarray
    W_dec: np.ndarray   # (n_code, n_in)
    b_dec: np.ndarray

    @classmethod
    def initialize(cls, n_in=INPUT_DIM, n_code=CODE_DIM, rng=None):
        rng = rng if rng is not None else make_rng(0)
        return cls(
            W_enc=rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_in, n_code)),
            b_enc=np.zeros(n_code),
            W_dec=rng.normal(0.0, 1.0 / np.sqrt(n_code), size=(n_code, n_in)),
            b_dec=np.zeros(n_in),
        )

    @property
    def n_in(self):
        return self.W_enc.shape[0]

    @property
    def n_code(self):
        return self.W_enc.shape[1]

    def arrays(self):
        return [self.W_enc, self.b_enc, self.W_dec, self.b_dec]

    def copy(self):
        return Subnet(*(a.copy() for a in self.arrays()))

    def encode(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise DimensionError(f"input has length {x.shape[-1]}, subnet expects {self.n_in}")
        return sigmoid(x @ self.W_enc + self.b_enc)

    def decode(self, code):
        return sigmoid(code @ self.W_dec + self.b_dec)


@dataclass
class SiameseParams:
    image_net: Subnet
    text_net: Subnet

    @classmethod
    def initialize(cls, n_in=INPUT_DIM, n_code=CODE_DIM, rng=None):
        rng = rng if rng is not None else make_rng(0)
        return cls(Subnet.initialize(n_in, n_code, rng), Subnet.initialize(n_in, n_code, rng))

    def arrays(self):
        return self.image_net.arrays() + self.text_net.arrays()

    def copy(self):
        return SiameseParams(self.image_net.copy(), self.text_net.copy())

    def to_vector(self):
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec):
        """New params of the same shapes filled from a flat vector."""
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = [], 0
        for a in self.arrays():
            out.append(vec[pos:pos + a.size].reshape(a.shape).copy())
            pos += a.size
        if pos != vec.size:
            raise DimensionError(f"vector has {vec.size} entries, params need {pos}")
        return SiameseParams(Subnet(*out[:4]), Subnet(*out[4:]))


LAYER_NAMES = [f"{net}.{name}" for net in ("image_net", "text_net")
               for name in ("W_enc", "b_enc", "W_dec", "b_dec")]


@dataclass
class LossConfig:
    alpha: float = ALPHA
    lam: float = LAMBDA
    # "fixed" uses ``lam``; "auto" sets lam = 1 / max C from a warm-up pass.
    lambda_mode: str = "fixed"
    sparsity_target: Optional[float] = None
    sparsity_weight: float = 0.0
    seed: int = 0
    # Lets tests probe the alpha = 0 / alpha = 1 limits.
    allow_alpha_limits: bool = False

    def __post_init__(self):
        lo_ok = self.alpha >= 0 if self.allow_alpha_limits else self.alpha > 0
        hi_ok = self.alpha <= 1 if self.allow_alpha_limits else self.alpha < 1
        if not (lo_ok and hi_ok):
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.lam <= 0:
            raise ValidationError("lambda must be positive")
        if self.lambda_mode not in ("fixed", "auto"):
            raise ValidationError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.sparsity_target is not None and not 0 < self.sparsity_target < 1:
            raise ValidationError("sparsity target must lie in (0, 1)")


@dataclass
class TrainConfig:
    epochs: int = 30
    # C**2 summed over 512 code units makes gradients large; 1e-2 saturates
    # every code unit within an epoch.
    learning_rate: float = 5e-5
    momentum: float = 0.9
    batch_size: int = 64
    loss: LossConfig = field(default_factory=LossConfig)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        loss = LossConfig(**d.pop("loss", {}))
        return cls(loss=loss, **d)


@dataclass
class PairedSample:
    p: np.ndarray
    q: np.ndarray
    indicator: int

    def __post_init__(self):
        if self.indicator not in (0, 1):
            raise ValidationError("indicator must be 0 or 1")


@dataclass
class PairedBatch:
    P: np.ndarray
    Q: np.ndarray
    I: np.ndarray

    @classmethod
    def of(cls, samples):
        if isinstance(samples, PairedBatch):
            return samples
        if isinstance(samples, PairedSample):
            samples = [samples]
        samples = list(samples)
        if not samples:
            raise ValidationError("empty batch")
        return cls(np.stack([np.asarray(s.p, dtype=np.float64) for s in samples]),
                   np.stack([np.asarray(s.q, dtype=np.float64) for s in samples]),
                   np.array([s.indicator for s in samples], dtype=np.float64))

    def __len__(self):
        return self.P.shape[0]


@dataclass
class LossBreakdown:
    l_image: float
    l_text: float
    l_compat: float
    total: float


def encode(net: Subnet, x):
    return net.encode(x)


def compatibility(code_f, code_g):
    """L1 distance between codes; vectorised over rows for 2-D input."""
    code_f = np.asarray(code_f, dtype=np.float64)
    code_g = np.asarray(code_g, dtype=np.float64)
    if code_f.shape != code_g.shape:
        raise DimensionError(f"code shapes differ: {code_f.shape} vs {code_g.shape}")
    d = np.abs(code_f - code_g).sum(axis=-1)
    return float(d) if d.ndim == 0 else d


def contrastive_loss(C, indicator, lam=LAMBDA):
    C = np.asarray(C, dtype=np.float64)
    out = indicator * C ** 2 + (1 - indicator) * np.exp(-lam * C)
    return float(out) if np.ndim(out) == 0 else out


def _forward(params: SiameseParams, batch: PairedBatch):
    f = params.image_net.encode(batch.P)
    g = params.text_net.encode(batch.Q)
    return f, g, params.image_net.decode(f), params.text_net.decode(g)


def per_sample_losses(params: SiameseParams, batch, cfg: LossConfig):
    """Arrays ``(l_image, l_text, l_compat, total)``, one entry per pair."""
    batch = PairedBatch.of(batch)
    f, g, p_hat, q_hat = _forward(params, batch)
    l_i = np.sum((batch.P - p_hat) ** 2, axis=1)
    l_t = np.sum((batch.Q - q_hat) ** 2, axis=1)
    l_c = contrastive_loss(compatibility(f, g), batch.I, cfg.lam)
    total = cfg.alpha * (l_i + l_t) + (1 - cfg.alpha) * l_c
    return l_i, l_t, np.atleast_1d(l_c), total


def loss(params: SiameseParams, sample, cfg: LossConfig) -> LossBreakdown:
    """Loss of one pair, or the batch mean for several."""
    parts = per_sample_losses(params, sample, cfg)
    return LossBreakdown(*(float(np.mean(x)) for x in parts))


def sparsity_penalty(params: SiameseParams, batch, cfg: LossConfig) -> float:
    if cfg.sparsity_target is None or cfg.sparsity_weight <= 0:
        return 0.0
    batch = PairedBatch.of(batch)
    f, g, _, _ = _forward(params, batch)
    rho = cfg.sparsity_target
    return float(cfg.sparsity_weight * (np.sum((f.mean(0) - rho) ** 2) + np.sum((g.mean(0) - rho) ** 2)))


def objective(params: SiameseParams, batch, cfg: LossConfig) -> float:
    """What ``gradient`` differentiates: mean total loss plus sparsity penalty."""
    return loss(params, batch, cfg).total + sparsity_penalty(params, batch, cfg)


def _subnet_backward(net: Subnet, x, code, recon, d_recon, d_code):
    d_dec = d_recon * recon * (1 - recon)
    d_code = d_code + d_dec @ net.W_dec.T
    d_enc = d_code * code * (1 - code)
    return [x.T @ d_enc, d_enc.sum(0), code.T @ d_dec, d_dec.sum(0)]


def gradient(params: SiameseParams, batch, cfg: LossConfig) -> SiameseParams:
    """Exact gradient of ``objective`` by backpropagation.

    The L1 distance contributes ``sign(f - g)``, taken as 0 at exact ties.
    """
    batch = PairedBatch.of(batch)
    n = len(batch)
    f, g, p_hat, q_hat = _forward(params, batch)
    a = cfg.alpha
    diff = f - g
    C = np.abs(diff).sum(axis=1)
    I = batch.I
    dC = (1 - a) * (2 * I * C - (1 - I) * cfg.lam * np.exp(-cfg.lam * C)) / n
    d_f = dC[:, None] * np.sign(diff)
    d_g = -d_f
    if cfg.sparsity_target is not None and cfg.sparsity_weight > 0:
        rho = cfg.sparsity_target
        d_f = d_f + 2 * cfg.sparsity_weight * (f.mean(0) - rho) / n
        d_g = d_g + 2 * cfg.sparsity_weight * (g.mean(0) - rho) / n
    grads = _subnet_backward(params.image_net, batch.P, f, p_hat, -2 * a * (batch.P - p_hat) / n, d_f)
    grads += _subnet_backward(params.text_net, batch.Q, g, q_hat, -2 * a * (batch.Q - q_hat) / n, d_g)
    for name, arr in zip(LAYER_NAMES, grads):
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in {name}")
    return SiameseParams(Subnet(*grads[:4]), Subnet(*grads[4:]))


def derange_pairs(n: int, rng) -> np.ndarray:
    """Uniform random permutation of ``range(n)`` without fixed points."""
    if n < 2:
        raise ValidationError(f"no derangement of {n} element(s) exists")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


@dataclass
class EpochRecord:
    breakdown: LossBreakdown
    mean_c_positive: float
    mean_c_negative: float


def auto_lambda(params: SiameseParams, P, Q, rng) -> float:
    """1 / max C over positives and one set of derangement negatives."""
    perm = derange_pairs(P.shape[0], rng)
    f = params.image_net.encode(P)
    c_pos = compatibility(f, params.text_net.encode(Q))
    c_neg = compatibility(f, params.text_net.encode(Q[perm]))
    c_max = float(max(c_pos.max(), c_neg.max()))
    return 1.0 / c_max if c_max > 0 else LAMBDA


def train(params: SiameseParams, P, Q, cfg: Optional[TrainConfig] = None, rng=None):
    """Minibatch gradient descent with momentum on positives plus fresh negatives.

    ``P`` and ``Q`` hold matching rows. Every epoch draws a new derangement
    for the negatives (one per positive). Returns ``(params, history)``.
    """
    cfg = cfg if cfg is not None else TrainConfig()
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    n = P.shape[0]
    if n < 2:
        raise ValidationError("training needs at least two positive pairs")
    if Q.shape[0] != n:
        raise DimensionError("image and text inputs have different row counts")
    rng = rng if rng is not None else make_rng(cfg.loss.seed)
    params = params.copy()
    loss_cfg = cfg.loss
    if cfg.epochs > 0 and loss_cfg.lambda_mode == "auto":
        lam = auto_lambda(params, P, Q, rng)
        loss_cfg = LossConfig(**{**{f.name: getattr(loss_cfg, f.name) for f in fields(loss_cfg)}, "lam": lam})
        log.info("auto lambda = %.6g", lam)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    history: List[EpochRecord] = []
    indicator = np.concatenate([np.ones(n), np.zeros(n)])
    for epoch in range(cfg.epochs):
        perm = derange_pairs(n, rng)
        full = PairedBatch(np.vstack([P, P]), np.vstack([Q, Q[perm]]), indicator)
        order = rng.permutation(2 * n)
        for start in range(0, 2 * n, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            try:
                grads = gradient(params, PairedBatch(full.P[sel], full.Q[sel], full.I[sel]), loss_cfg)
            except NumericError as exc:
                raise TrainingDivergenceError(f"epoch {epoch}: {exc}", epoch=epoch) from exc
            for v, a, gr in zip(velocity, params.arrays(), grads.arrays()):
                v *= cfg.momentum
                v -= cfg.learning_rate * gr
                a += v
        l_i, l_t, l_c, total = per_sample_losses(params, full, loss_cfg)
        if not np.all(np.isfinite(total)):
            raise TrainingDivergenceError(f"non-finite siamese loss in epoch {epoch}", epoch=epoch)
        f, g, _, _ = _forward(params, full)
        C = compatibility(f, g)
        history.append(EpochRecord(
            LossBreakdown(float(l_i.mean()), float(l_t.mean()), float(l_c.mean()), float(total.mean())),
            float(C[:n].mean()), float(C[n:].mean()),
        ))
        log.debug("siamese epoch %d total %.6f C+ %.4f C- %.4f", epoch, history[-1].breakdown.total,
                  history[-1].mean_c_positive, history[-1].mean_c_negative)
    return params, history


# --- checkpoints ----------------------------------------------------------------

SIAM_MAGIC = b"SIAMv1"


def save_siamese(path, params: SiameseParams):
    with open(path, "wb") as fh:
        w = Writer(fh)
        w.magic(SIAM_MAGIC)
        w.uint(params.image_net.n_in, params.image_net.n_code)
        for a in params.arrays():
            w.reals(a)


def load_siamese(path) -> SiameseParams:
    with open(path, "rb") as fh:
        r = Reader(fh, str(path))
        r.magic(SIAM_MAGIC)
        n_in, n_code = r.uint(2)
        nets = []
        for _ in range(2):
            nets.append(Subnet(r.reals(n_in, n_code), r.reals(n_code), r.reals(n_code, n_in), r.reals(n_in)))
        r.expect_end()
    return SiameseParams(*nets)
