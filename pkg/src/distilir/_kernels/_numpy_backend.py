"""Pure-numpy implementations of the encoder hot kernels.

These four functions carry essentially all of the training runtime:
the attention-lite mixing step and the position-wise affine+tanh step,
forward and backward, over a padded batch ``X`` of shape (n, T, h).

``key_bias`` has shape (n, 1, T) and holds 0.0 at attendable positions
and a large negative constant at [PAD] positions, so padded keys get
an attention weight of exactly 0.0 after the masked softmax.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def attention_forward(X, M, key_bias):
    """Residual attention-lite: Y = X + softmax((X M) X^T / sqrt(h)) X.

    Returns (Y, P) where P is the (n, T, T) attention matrix kept for
    the backward pass.
    """
    h = X.shape[2]
    scale = 1.0 / np.sqrt(h)
    Q = X @ M
    S = Q @ X.transpose(0, 2, 1) * scale + key_bias
    S -= S.max(axis=2, keepdims=True)
    P = np.exp(S)
    P /= P.sum(axis=2, keepdims=True)
    Y = X + P @ X
    return Y, P


def attention_backward(X, M, P, dY):
    """Gradients of attention_forward w.r.t. X and M given dY."""
    h = X.shape[2]
    scale = 1.0 / np.sqrt(h)
    Q = X @ M
    Xt = X.transpose(0, 2, 1)

    dX = dY.copy()
    dP = dY @ Xt
    dX += P.transpose(0, 2, 1) @ dY
    dS = P * (dP - (dP * P).sum(axis=2, keepdims=True))
    dQ = dS @ X * scale
    dX += dS.transpose(0, 2, 1) @ Q * scale
    dM = np.einsum("nti,ntj->ij", X, dQ)
    dX += dQ @ M.T
    return dX, dM


def ffn_forward(X, W, b):
    """Residual position-wise affine+tanh: Y = X + tanh(X W + b)."""
    F = np.tanh(X @ W + b)
    return X + F, F


def ffn_backward(X, W, F, dY):
    """Gradients of ffn_forward w.r.t. X, W, b given dY."""
    dZ = dY * (1.0 - F * F)
    dX = dY + dZ @ W.T
    dW = np.einsum("nti,ntj->ij", X, dZ)
    db = dZ.sum(axis=(0, 1))
    return dX, dW, db
