"""Restricted Boltzmann machines trained with contrastive divergence.

Three visible-unit variants share one parameter layout:

* ``bernoulli`` -- binary visibles, logistic conditionals.
* ``gaussian`` -- real visibles with per-unit standard deviation ``sigma``;
  the coupling term uses ``v / sigma``.
* ``replicated_softmax`` -- word counts; one softmax over the vocabulary
  drawn ``M`` times, hidden biases scaled by ``M`` (the document length).

Weights ``W`` are ``(n_visible, n_hidden)``.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np

from .binio import Reader, Writer
from .errors import DimensionError, TrainingDivergenceError, UsageError, ValidationError
from .numeric import make_rng, sigmoid, softmax_rows

log = logging.getLogger(__name__)


class Variant(str, Enum):
    BERNOULLI = "bernoulli"
    GAUSSIAN = "gaussian"
    REPLICATED_SOFTMAX = "replicated_softmax"


_VARIANT_CODES = {Variant.BERNOULLI: 0, Variant.GAUSSIAN: 1, Variant.REPLICATED_SOFTMAX: 2}


@dataclass
class RbmParams:
    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    variant: Variant = Variant.BERNOULLI
    sigma: Optional[np.ndarray] = None
    # Per-dimension standardization applied to raw inputs before the
    # visible layer (gaussian stacks only); identity when None.
    input_mean: Optional[np.ndarray] = None
    input_scale: Optional[np.ndarray] = None

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.W = np.asarray(self.W, dtype=np.float64)
        n, m = self.W.shape
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        if self.b.size != n or self.c.size != m:
            raise DimensionError(f"bias shapes {self.b.shape}/{self.c.shape} do not match W {self.W.shape}")
        if self.sigma is None:
            self.sigma = np.ones(n)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if self.sigma.size != n or np.any(self.sigma <= 0):
            raise ValidationError("sigma must be a strictly positive vector of length n_visible")

    @property
    def n_visible(self):
        return self.W.shape[0]

    @property
    def n_hidden(self):
        return self.W.shape[1]

    @classmethod
    def initialize(cls, n_visible, n_hidden, variant=Variant.BERNOULLI, rng=None, std=0.01):
        rng = rng if rng is not None else make_rng(0)
        return cls(
            W=rng.normal(0.0, std, size=(n_visible, n_hidden)),
            b=np.zeros(n_visible),
            c=np.zeros(n_hidden),
            variant=variant,
        )

    def copy(self):
        cp = lambda a: None if a is None else a.copy()  # noqa: E731
        return replace(self, W=self.W.copy(), b=self.b.copy(), c=self.c.copy(), sigma=self.sigma.copy(),
                       input_mean=cp(self.input_mean), input_scale=cp(self.input_scale))


@dataclass
class CdConfig:
    epsilon: float = 0.01
    k: int = 1
    epochs: int = 10
    batch_size: int = 64
    momentum: float = 0.5
    final_momentum: float = 0.9
    momentum_switch_epoch: int = 5
    weight_decay: float = 2e-4
    sparsity_target: Optional[float] = None
    sparsity_weight: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.k < 1:
            raise ValidationError("k must be at least 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.sparsity_target is not None and not 0 < self.sparsity_target < 1:
            raise ValidationError("sparsity target must lie in (0, 1)")

    @classmethod
    def default_for(cls, variant, **overrides):
        eps = 0.001 if Variant(variant) is Variant.GAUSSIAN else 0.01
        return cls(**{"epsilon": eps, **overrides})


def _check_m(params, M):
    rs = params.variant is Variant.REPLICATED_SOFTMAX
    if rs and M is None:
        raise UsageError("replicated_softmax needs the document length M")
    if not rs and M is not None:
        raise UsageError(f"M only applies to replicated_softmax, not {params.variant.value}")


def _check_visible(params, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != params.n_visible:
        raise DimensionError(f"visible vector has length {v.shape[-1]}, expected {params.n_visible}")
    return v


def energy(params: RbmParams, v, h, M=None) -> float:
    _check_m(params, M)
    v = _check_visible(params, v)
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.n_hidden:
        raise DimensionError(f"hidden vector has length {h.shape[-1]}, expected {params.n_hidden}")
    if params.variant is Variant.GAUSSIAN:
        vs = v / params.sigma
        return float(-vs @ params.W @ h + np.sum((v - params.b) ** 2 / (2 * params.sigma ** 2)) - params.c @ h)
    hidden_bias = params.c @ h
    if params.variant is Variant.REPLICATED_SOFTMAX:
        hidden_bias = M * hidden_bias
    return float(-v @ params.W @ h - params.b @ v - hidden_bias)


def hidden_activation(params: RbmParams, v, M=None) -> np.ndarray:
    """p(h_j = 1 | v); ``v`` may be a vector or a batch of rows."""
    _check_m(params, M)
    v = _check_visible(params, v)
    if params.variant is Variant.GAUSSIAN:
        pre = (v / params.sigma) @ params.W + params.c
    elif params.variant is Variant.REPLICATED_SOFTMAX:
        scale = np.asarray(M, dtype=np.float64)
        if v.ndim == 2 and scale.ndim == 1:
            scale = scale[:, None]
        pre = v @ params.W + scale * params.c
    else:
        pre = v @ params.W + params.c
    return sigmoid(pre)


def visible_activation(params: RbmParams, h, M=None) -> np.ndarray:
    """Conditional over visibles given hiddens.

    bernoulli: unit probabilities; gaussian: Normal means (variance
    ``sigma**2``); replicated_softmax: the word distribution sampled ``M``
    times on reconstruction.
    """
    _check_m(params, M)
    h = np.asarray(h, dtype=np.float64)
    pre = h @ params.W.T
    if params.variant is Variant.GAUSSIAN:
        return params.b + params.sigma * pre
    if params.variant is Variant.REPLICATED_SOFTMAX:
        probs = softmax_rows(pre + params.b)
        return probs[0] if h.ndim == 1 else probs
    return sigmoid(pre + params.b)


def _doc_lengths(params, batch, strict=True):
    if params.variant is not Variant.REPLICATED_SOFTMAX:
        return None
    M = batch.sum(axis=1)
    if strict and np.any(M < 1):
        raise ValidationError("replicated_softmax rows need at least one word")
    return M


def reconstruction_error(params: RbmParams, batch, recon) -> float:
    """Mean squared error (gaussian) or cross-entropy per row."""
    if params.variant is Variant.GAUSSIAN:
        return float(np.mean(np.sum((batch - recon) ** 2, axis=1)))
    p = np.clip(recon, 1e-12, 1 - 1e-12)
    if params.variant is Variant.REPLICATED_SOFTMAX:
        return float(np.mean(-np.sum(batch * np.log(p), axis=1)))
    return float(np.mean(-np.sum(batch * np.log(p) + (1 - batch) * np.log(1 - p), axis=1)))


def cd_gradients(params: RbmParams, batch, cfg: CdConfig, rng):
    """CD-k estimates of the log-likelihood gradient for W, b and c.

    Returns ``(dW, db, dc, first_reconstruction)``. The sparsity penalty
    is folded in; learning rate and weight decay are not.
    """
    v0 = _check_visible(params, np.atleast_2d(batch))
    n = v0.shape[0]
    M = _doc_lengths(params, v0)
    h0 = hidden_activation(params, v0, M)
    h = (rng.random(h0.shape) < h0).astype(np.float64)
    first = None
    vk, hk = v0, h0
    for step in range(cfg.k):
        vp = visible_activation(params, h, M)
        if first is None:
            first = vp
        if params.variant is Variant.REPLICATED_SOFTMAX:
            vk = rng.multinomial(M.astype(np.int64), vp).astype(np.float64)
        else:
            vk = vp
        hk = hidden_activation(params, vk, M)
        if step < cfg.k - 1:
            h = (rng.random(hk.shape) < hk).astype(np.float64)

    if params.variant is Variant.GAUSSIAN:
        s0, sk = v0 / params.sigma, vk / params.sigma
        db = np.mean(v0 - vk, axis=0) / params.sigma ** 2
    else:
        s0, sk = v0, vk
        db = np.mean(v0 - vk, axis=0)
    dW = (s0.T @ h0 - sk.T @ hk) / n
    if M is not None:
        dc = np.mean(M[:, None] * (h0 - hk), axis=0)
    else:
        dc = np.mean(h0 - hk, axis=0)

    if cfg.sparsity_target is not None and cfg.sparsity_weight > 0:
        gap = cfg.sparsity_target - h0.mean(axis=0)
        dc = dc + cfg.sparsity_weight * gap
        dW = dW + cfg.sparsity_weight * np.outer(s0.mean(axis=0), gap)

    return dW, db, dc, first


def cd_step(params: RbmParams, batch, cfg: CdConfig, rng, velocity=None, momentum=None, epoch=0):
    """One CD-k update on a minibatch.

    ``velocity`` (a dict of arrays, updated in place) carries momentum
    between calls; without it the update is plain ``epsilon * gradient``.
    Returns ``(new_params, reconstruction_error)``.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    dW, db, dc, first = cd_gradients(params, batch, cfg, rng)
    dW = dW - cfg.weight_decay * params.W
    steps = {"W": cfg.epsilon * dW, "b": cfg.epsilon * db, "c": cfg.epsilon * dc}
    if velocity is not None:
        mom = cfg.momentum if momentum is None else momentum
        for key, step in steps.items():
            velocity[key] = mom * velocity.get(key, 0.0) + step
            steps[key] = velocity[key]
    new = params.copy()
    new.W += steps["W"]
    new.b += steps["b"]
    new.c += steps["c"]
    if not (np.all(np.isfinite(new.W)) and np.all(np.isfinite(new.b)) and np.all(np.isfinite(new.c))):
        raise TrainingDivergenceError(f"non-finite RBM update in epoch {epoch}", epoch=epoch)
    return new, reconstruction_error(params, batch, first)


def standardize_fit(data):
    mean = data.mean(axis=0)
    scale = data.std(axis=0)
    scale[scale < 1e-8] = 1.0
    return mean, scale


def prepare_input(params: RbmParams, data):
    data = np.asarray(data, dtype=np.float64)
    if params.input_mean is not None:
        data = (data - params.input_mean) / params.input_scale
    return data


def transform(params: RbmParams, data) -> np.ndarray:
    """Hidden probabilities for raw inputs (standardization and M handled)."""
    v = np.atleast_2d(prepare_input(params, data))
    return hidden_activation(params, v, _doc_lengths(params, v, strict=False))


def train_rbm(data, n_hidden, variant=Variant.BERNOULLI, cfg: Optional[CdConfig] = None, rng=None):
    """Train one RBM by minibatch CD; returns ``(params, history)``.

    ``history`` holds the mean reconstruction error of each epoch.
    """
    variant = Variant(variant)
    cfg = cfg if cfg is not None else CdConfig.default_for(variant)
    rng = rng if rng is not None else make_rng(cfg.seed)
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    params = RbmParams.initialize(data.shape[1], n_hidden, variant, rng)
    if variant is Variant.GAUSSIAN:
        params.input_mean, params.input_scale = standardize_fit(data)
    x = prepare_input(params, data)
    velocity = {}
    history = []
    for epoch in range(cfg.epochs):
        mom = cfg.momentum if epoch < cfg.momentum_switch_epoch else cfg.final_momentum
        order = rng.permutation(x.shape[0])
        errs, sizes = [], []
        for start in range(0, x.shape[0], cfg.batch_size):
            batch = x[order[start:start + cfg.batch_size]]
            params, err = cd_step(params, batch, cfg, rng, velocity=velocity, momentum=mom, epoch=epoch)
            errs.append(err)
            sizes.append(batch.shape[0])
        history.append(float(np.average(errs, weights=sizes)))
        if not np.isfinite(history[-1]):
            raise TrainingDivergenceError(f"reconstruction error diverged in epoch {epoch}", epoch=epoch)
        log.debug("rbm %s epoch %d recon %.6f", variant.value, epoch, history[-1])
    return params, history


def train_stack(level1, layer_sizes: Sequence[int], variant_first=Variant.BERNOULLI,
                cfgs: Optional[Sequence[CdConfig]] = None, rng=None) -> List[RbmParams]:
    """Greedy layer-wise training of a two-RBM stack.

    The first layer uses ``variant_first``; the second is bernoulli and is
    trained on the first layer's hidden probabilities.
    """
    if len(layer_sizes) != 2:
        raise ValidationError("a stack has exactly two hidden layer sizes")
    rng = rng if rng is not None else make_rng(0)
    variant_first = Variant(variant_first)
    if cfgs is None:
        cfgs = [CdConfig.default_for(variant_first), CdConfig.default_for(Variant.BERNOULLI)]
    first, _ = train_rbm(level1, layer_sizes[0], variant_first, cfgs[0], rng)
    hidden = transform(first, level1)
    second, _ = train_rbm(hidden, layer_sizes[1], Variant.BERNOULLI, cfgs[1], rng)
    return [first, second]


def stack_transform(stack: Sequence[RbmParams], data) -> np.ndarray:
    x = data
    for params in stack:
        x = transform(params, x)
    return x


# --- checkpoints ----------------------------------------------------------------

RBM_MAGIC = b"RBMv1"


def write_rbm(w: Writer, params: RbmParams):
    w.magic(RBM_MAGIC)
    w.uint(_VARIANT_CODES[params.variant], params.n_visible, params.n_hidden)
    w.reals(params.b)
    w.reals(params.c)
    w.reals(params.W)
    w.reals(params.sigma)
    has_std = params.input_mean is not None
    w.uint(int(has_std))
    if has_std:
        w.reals(params.input_mean)
        w.reals(params.input_scale)


def read_rbm(r: Reader) -> RbmParams:
    r.magic(RBM_MAGIC)
    code, n, m = r.uint(3)
    variant = {v: k for k, v in _VARIANT_CODES.items()}.get(code)
    if variant is None:
        raise ValidationError(f"unknown RBM variant code {code}")
    b, c, W, sigma = r.reals(n), r.reals(m), r.reals(n, m), r.reals(n)
    params = RbmParams(W=W, b=b, c=c, variant=variant, sigma=sigma)
    if r.uint():
        params.input_mean, params.input_scale = r.reals(n), r.reals(n)
    return params


def save_rbm(path, params: RbmParams):
    with open(path, "wb") as fh:
        write_rbm(Writer(fh), params)


def load_rbm(path) -> RbmParams:
    with open(path, "rb") as fh:
        r = Reader(fh, str(path))
        params = read_rbm(r)
        r.expect_end()
    return params
