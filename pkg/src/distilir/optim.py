"""Decoupled-weight-decay Adam and the warmup + linear-decay schedule."""

from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np

from .numerics import FLOAT


class AdamW:
    """Adam with decoupled weight decay over a fixed list of arrays.

    Parameters are updated in place, in list order, so the update is
    deterministic.  ``decay_mask[i]`` selects which arrays receive
    weight decay (biases and the student projection are excluded by
    the callers).
    """

    def __init__(
        self,
        params: Sequence[np.ndarray],
        betas=(0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
        decay_mask: Optional[Sequence[bool]] = None,
    ):
        self.params = list(params)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        if decay_mask is None:
            decay_mask = [p.ndim >= 2 for p in self.params]
        if len(decay_mask) != len(self.params):
            raise ValueError("decay_mask length mismatch")
        self.decay_mask = list(decay_mask)
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray], lr: float) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list length mismatch")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v, decay in zip(self.params, grads, self.m, self.v, self.decay_mask):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if decay and self.weight_decay > 0.0:
                update = update + self.weight_decay * p
            p -= lr * update


def warmup_linear_lr(step: int, total_steps: int, peak_lr: float, warmup_frac: float) -> float:
    """Linear ramp 0 -> peak over the warmup span, then linear decay to 0.

    ``step`` counts from 0 (before the first update) to ``total_steps``.
    """
    if not 0.0 <= warmup_frac < 1.0:
        raise ValueError("warmup fraction must be in [0, 1)")
    if step < 0 or step > total_steps:
        raise ValueError(f"step {step} out of range [0, {total_steps}]")
    if total_steps == 0:
        return 0.0
    warmup_steps = int(round(warmup_frac * total_steps))
    if warmup_steps > 0 and step <= warmup_steps:
        return peak_lr * step / warmup_steps
    if step == 0:
        return 0.0
    denom = max(total_steps - warmup_steps, 1)
    return peak_lr * (total_steps - step) / denom
