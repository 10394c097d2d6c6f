"""Dense numeric helpers shared by every stage.

Matrices are plain float64 numpy arrays. Randomness always comes from an
explicit ``numpy.random.Generator`` argument; nothing here touches global
RNG state.
"""

from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError, NumericError

RNG_ALGORITHM = "PCG64"


def make_rng(seed, *keys):
    """Deterministic PCG64 generator for ``seed`` (optionally salted by ``keys``)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def sigmoid(x):
    """Logistic function, evaluated in the branch that cannot overflow."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def softmax_rows(m):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    z = m - m.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def l1_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def ensure_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite entries in {what}")
    return x


def finite_diff_grad(f: Callable[[np.ndarray], float], theta: Sequence[float], h: float = 1e-6):
    """Central-difference gradient of scalar ``f`` at ``theta``."""
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    flat = theta.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(theta)
        flat[i] = orig - h
        fm = f(theta)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"f is not finite around coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return grad
