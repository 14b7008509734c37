"""Training objectives: one-hot, score-distillation, embedding-matching,
and token-reconstruction losses.

Every operation returns its value together with analytic gradients with
respect to its direct inputs; the gradients are what the trainer
backpropagates through the encoders.  All of them are validated against
central finite differences in the test suite (tolerance 1e-4).

Distillation losses treat teacher scores as constants: gradient flows
only to the student side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .encoders import Projection
from .numerics import FLOAT, sigmoid, softplus, stable_softmax


@dataclass
class ScoreLoss:
    """Loss over a candidate score list; grad is w.r.t. those scores."""

    value: float
    grad: np.ndarray


@dataclass
class EmbedMatchLoss:
    value: float
    grad_student: np.ndarray  # (n, k_s)
    grad_weight: np.ndarray  # projection weight gradient
    grad_bias: np.ndarray


@dataclass
class ReconstructionLoss:
    value: float
    grad_embs: np.ndarray  # (P, k)
    grad_weight: np.ndarray  # decoder weight gradient (V, k)
    grad_bias: np.ndarray  # (V,)


def _scores(s) -> np.ndarray:
    s = np.asarray(s, dtype=FLOAT)
    if s.ndim != 1 or s.size < 1:
        raise ValueError("score list must be a non-empty vector")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite score")
    return s


def _labels(y, length: int) -> np.ndarray:
    y = np.asarray(y, dtype=FLOAT)
    if y.shape != (length,):
        raise ValueError("label/score length mismatch")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary")
    return y


def _pair(s_student, s_teacher):
    ss = _scores(s_student)
    st = _scores(s_teacher)
    if ss.shape != st.shape:
        raise ValueError("student/teacher score length mismatch")
    return ss, st


# ---------------------------------------------------------------------------
# One-hot (label) losses
# ---------------------------------------------------------------------------


def softmax_ce_onehot(s, y) -> ScoreLoss:
    """Cross entropy of softmax(s) against binary labels (>=1 positive)."""
    s = _scores(s)
    y = _labels(y, s.size)
    if y.sum() < 1:
        raise ValueError("no positive")
    p = stable_softmax(s)
    # -sum_j y_j log p_j, via the shift-stable log-sum-exp
    log_p = (s - s.max()) - np.log(np.exp(s - s.max()).sum())
    value = float(-(y * log_p).sum())
    grad = y.sum() * p - y
    return ScoreLoss(value, grad)


def binary_ce_onehot(s, y) -> ScoreLoss:
    """One-vs-all binary cross entropy; log(1-sigma(s)) = -softplus(s)."""
    s = _scores(s)
    y = _labels(y, s.size)
    value = float((y * softplus(-s) + (1.0 - y) * softplus(s)).sum())
    return ScoreLoss(value, sigmoid(s) - y)


# ---------------------------------------------------------------------------
# Score-based distillation losses
# ---------------------------------------------------------------------------


def softmax_ce_distill(s_student, s_teacher, temperature: float = 1.0) -> ScoreLoss:
    """Cross entropy of student softmax against teacher softmax targets."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    ss, st = _pair(s_student, s_teacher)
    t = stable_softmax(st / temperature)
    zs = ss / temperature
    log_p = (zs - zs.max()) - np.log(np.exp(zs - zs.max()).sum())
    value = float(-(t * log_p).sum())
    grad = (stable_softmax(zs) - t) / temperature
    return ScoreLoss(value, grad)


def binary_ce_distill(s_student, s_teacher) -> ScoreLoss:
    """Binary cross entropy against soft teacher targets sigma(s_teacher)."""
    ss, st = _pair(s_student, s_teacher)
    t = sigmoid(st)
    value = float((t * softplus(-ss) + (1.0 - t) * softplus(ss)).sum())
    return ScoreLoss(value, sigmoid(ss) - t)


def mse_distill(s_student, s_teacher) -> ScoreLoss:
    """Logit matching: sum of squared score differences."""
    ss, st = _pair(s_student, s_teacher)
    diff = st - ss
    return ScoreLoss(float((diff * diff).sum()), -2.0 * diff)


SCORE_DISTILL_LOSSES = {
    "softmax_ce": softmax_ce_distill,
    "binary_ce": lambda ss, st, temperature=1.0: binary_ce_distill(ss, st),
    "mse": lambda ss, st, temperature=1.0: mse_distill(ss, st),
}


# ---------------------------------------------------------------------------
# Embedding matching
# ---------------------------------------------------------------------------


def embed_match_loss(
    teacher_embs: Sequence[np.ndarray],
    student_embs: Sequence[np.ndarray],
    proj: Projection,
    squared: bool = False,
) -> EmbedMatchLoss:
    """Mean L2 distance between teacher and projected student embeddings.

    Unsquared by default (the generalization-gap terms are unsquared
    norms); pass ``squared=True`` for the smooth variant.  Gradients go
    to the student embeddings and the projection only.
    """
    t = np.asarray(teacher_embs, dtype=FLOAT)
    s = np.asarray(student_embs, dtype=FLOAT)
    if t.ndim != 2 or s.ndim != 2 or t.shape[0] != s.shape[0]:
        raise ValueError("teacher/student embedding count mismatch")
    n = t.shape[0]
    r = s @ proj.weight.T + proj.bias - t  # residual per pair, (n, k_t)
    norms = np.sqrt((r * r).sum(axis=1))
    if squared:
        value = float((norms * norms).mean())
        d_out = 2.0 * r / n
    else:
        value = float(norms.mean())
        safe = np.where(norms > 0.0, norms, 1.0)
        d_out = np.where(norms[:, None] > 0.0, r / safe[:, None], 0.0) / n
    return EmbedMatchLoss(
        value=value,
        grad_student=d_out @ proj.weight,
        grad_weight=d_out.T @ s,
        grad_bias=d_out.sum(axis=0),
    )


# ---------------------------------------------------------------------------
# Token reconstruction
# ---------------------------------------------------------------------------


def reconstruction_loss(
    final_token_embs: np.ndarray,
    original_tokens: Sequence[int],
    decoder: Projection,
) -> ReconstructionLoss:
    """Mean per-position cross entropy of decoded logits vs original ids.

    ``final_token_embs`` carries one row per non-pad position (specials
    included); the decoder is an affine map from embedding space to
    vocabulary logits.
    """
    embs = np.asarray(final_token_embs, dtype=FLOAT)
    ids = np.asarray(original_tokens, dtype=np.int64)
    if embs.ndim != 2 or ids.ndim != 1 or embs.shape[0] != ids.shape[0]:
        raise ValueError("one embedding row per token position required")
    n = embs.shape[0]
    logits = embs @ decoder.weight.T + decoder.bias  # (P, V)
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    value = float((log_z - shifted[rows, ids]).mean())
    d_logits = p
    d_logits[rows, ids] -= 1.0
    d_logits /= n
    return ReconstructionLoss(
        value=value,
        grad_embs=d_logits @ decoder.weight,
        grad_weight=d_logits.T @ embs,
        grad_bias=d_logits.sum(axis=0),
    )
