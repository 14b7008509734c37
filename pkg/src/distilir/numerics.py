"""Low-level numeric primitives shared by every other module.

Vectors and matrices are plain float64 numpy arrays (1-D and 2-D,
C-contiguous).  Everything downstream of this module assumes float64:
the inequality checks in :mod:`distilir.bounds` are only meaningful if
training and verification run at full precision.

Randomness is counter-based (Philox) so that a given 64-bit seed
produces the identical stream on every platform.  Sub-streams are
derived from a root seed plus a label, never by splitting generator
state.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Tuple

import numpy as np

FLOAT = np.float64


class NonFiniteError(ValueError):
    """Raised when an exported operation would produce NaN/inf."""


def as_vec(x) -> np.ndarray:
    """Coerce to a 1-D float64 array, rejecting non-finite entries."""
    v = np.ascontiguousarray(x, dtype=FLOAT)
    if v.ndim != 1:
        raise ValueError(f"expected 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise NonFiniteError("vector contains non-finite entries")
    return v


def as_mat(x) -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    m = np.ascontiguousarray(x, dtype=FLOAT)
    if m.ndim != 2:
        raise ValueError(f"expected 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonFiniteError("matrix contains non-finite entries")
    return m


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; equal seeds give equal streams everywhere."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit sub-seed for a named random stream.

    Hash-derived so that adding a new stream never perturbs existing
    ones.
    """
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


# ---------------------------------------------------------------------------
# Stable activations
# ---------------------------------------------------------------------------


def stable_softmax(v) -> np.ndarray:
    """Softmax with max-subtraction; safe for entries up to +/-1e4.

    Raises:
        ValueError: if the input is empty.
    """
    v = np.asarray(v, dtype=FLOAT)
    if v.size == 0:
        raise ValueError("empty vector")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def softplus(x):
    """log(1 + e^x) without overflow for |x| <= 700."""
    x = np.asarray(x, dtype=FLOAT)
    return np.where(x > 0, x + np.log1p(np.exp(-np.abs(x))), np.log1p(np.exp(x)))


def sigmoid(x):
    """Logistic function, stable on both tails."""
    x = np.asarray(x, dtype=FLOAT)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(x):
    """log sigma(x) = -softplus(-x), exact identity in this implementation."""
    x = np.asarray(x, dtype=FLOAT)
    return -softplus(-x)


def sigmoid_logsigmoid_softplus(x: float) -> Tuple[float, float, float]:
    """Scalar convenience: (sigma(x), log sigma(x), softplus(x))."""
    if not np.isfinite(x):
        raise NonFiniteError("non-finite input")
    return float(sigmoid(x)), float(log_sigmoid(x)), float(softplus(x))


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


def grad_check(
    loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    params: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central differences.

    ``loss_fn(params)`` must return ``(value, gradient)`` with the
    gradient shaped like ``params``.  Returns the max over coordinates of
    ``|analytic - numeric| / max(1, |analytic|)``.

    Raises:
        ValueError: if eps <= 0.
        NonFiniteError: if the objective evaluates to NaN/inf.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = np.asarray(params, dtype=FLOAT)
    value, analytic = loss_fn(params)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite objective")
    analytic = np.asarray(analytic, dtype=FLOAT)

    flat = params.ravel()
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        up, _ = loss_fn(bumped.reshape(params.shape))
        bumped[i] -= 2 * eps
        down, _ = loss_fn(bumped.reshape(params.shape))
        if not (np.isfinite(up) and np.isfinite(down)):
            raise NonFiniteError("non-finite objective")
        numeric[i] = (up - down) / (2 * eps)

    a = analytic.ravel()
    denom = np.maximum(1.0, np.abs(a))
    return float(np.max(np.abs(a - numeric) / denom))
