"""Task-specific query generation by masked, noise-perturbed autoencoding.

A single-latent-vector denoising autoencoder stands in for a large
pretrained encoder-decoder: token embeddings are mean-pooled into a
latent z, and a per-position affine map over [z; position embedding]
produces vocabulary logits.  Generation encodes a (randomly masked)
query, perturbs z with isotropic Gaussian noise, and greedy-decodes
position by position, stopping at the first [PAD] prediction.

That is enough to produce on-manifold neighbors of training queries,
which is all the augmentation-side embedding-matching term consumes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .encoders import CLS_ID, MASK_ID, PAD_ID, SEP_ID
from .numerics import FLOAT, derive_seed, make_rng
from .optim import AdamW, warmup_linear_lr


@dataclass
class AutoencoderParams:
    embed: np.ndarray  # (V, h)
    pos: np.ndarray  # (M, h) position embeddings
    dec_w: np.ndarray  # (V, 2h): [latent | position] halves
    dec_b: np.ndarray  # (V,)
    max_len: int
    hidden: int

    def param_arrays(self) -> List[np.ndarray]:
        return [self.embed, self.pos, self.dec_w, self.dec_b]


@dataclass
class AutoencoderConfig:
    hidden: int = 64
    max_len: int = 16
    steps: int = 3000
    batch_size: int = 32
    peak_lr: float = 2e-3
    warmup_frac: float = 0.05
    seed: int = 0
    train_sigma: float = 0.05
    train_mask_prob: float = 0.05
    checkpoints: int = 5


def content_tokens(seq: Sequence[int], max_len: int) -> np.ndarray:
    """Strip special ids; generation operates on bare content tokens."""
    toks = [int(t) for t in seq if int(t) not in (PAD_ID, CLS_ID, SEP_ID)]
    return np.asarray(toks[:max_len], dtype=np.int64)


def init_autoencoder(vocab_size: int, cfg: AutoencoderConfig) -> AutoencoderParams:
    rng = make_rng(derive_seed(cfg.seed, "autoencoder_init"))
    h = cfg.hidden
    return AutoencoderParams(
        embed=rng.normal(0.0, 0.5, size=(vocab_size, h)),
        pos=rng.normal(0.0, 0.5, size=(cfg.max_len, h)),
        dec_w=rng.normal(0.0, 1.0 / np.sqrt(2 * h), size=(vocab_size, 2 * h)),
        dec_b=np.zeros(vocab_size, dtype=FLOAT),
        max_len=cfg.max_len,
        hidden=h,
    )


def encode_latent(ae: AutoencoderParams, tokens: np.ndarray) -> np.ndarray:
    """Mean of the token embeddings (single query)."""
    if tokens.size == 0:
        raise ValueError("cannot encode an empty query")
    return ae.embed[tokens].mean(axis=0)


def decode_logits(ae: AutoencoderParams, z: np.ndarray) -> np.ndarray:
    """(M, V) logits from [z; position embedding] per position."""
    h = ae.hidden
    wz, wp = ae.dec_w[:, :h], ae.dec_w[:, h:]
    return z @ wz.T + ae.pos @ wp.T + ae.dec_b


def greedy_decode(ae: AutoencoderParams, z: np.ndarray) -> np.ndarray:
    """Argmax token per position, truncated at the first [PAD]."""
    ids = decode_logits(ae, z).argmax(axis=1)
    out = []
    for t in ids:
        if int(t) == PAD_ID:
            break
        out.append(int(t))
    return np.asarray(out, dtype=np.int64)


def roundtrip_stats(ae: AutoencoderParams, queries: Sequence[np.ndarray]) -> Tuple[float, float]:
    """(token accuracy, exact-sequence fraction) at sigma=0, no masking."""
    matched = total = exact = 0
    for q in queries:
        x = content_tokens(q, ae.max_len)
        y = greedy_decode(ae, encode_latent(ae, x))
        m = min(len(x), len(y))
        matched += int((x[:m] == y[:m]).sum())
        total += max(len(x), len(y))
        exact += int(len(x) == len(y) and m == len(x) and np.array_equal(x, y))
    if total == 0:
        raise ValueError("no queries to evaluate")
    return matched / total, exact / len(queries)


def _batch_loss_grads(ae: AutoencoderParams, batch: List[np.ndarray],
                      rng: np.random.Generator, sigma: float, mask_prob: float):
    h, M = ae.hidden, ae.max_len
    n = len(batch)
    wz, wp = ae.dec_w[:, :h], ae.dec_w[:, h:]

    targets = np.full((n, M), PAD_ID, dtype=np.int64)
    zs = np.zeros((n, h))
    masked_ids = []
    for i, x in enumerate(batch):
        targets[i, : len(x)] = x
        ids = x.copy()
        if mask_prob > 0:
            drop = rng.random(len(ids)) < mask_prob
            ids[drop] = MASK_ID
        masked_ids.append(ids)
        zs[i] = ae.embed[ids].mean(axis=0)
    if sigma > 0:
        zs = zs + rng.normal(0.0, sigma, size=zs.shape)

    logits = zs @ wz.T + (ae.pos @ wp.T)[None, :, :] + ae.dec_b  # (n, M, V)
    shifted = logits - logits.max(axis=2, keepdims=True)
    p = np.exp(shifted)
    p /= p.sum(axis=2, keepdims=True)
    rows = np.arange(n)[:, None], np.arange(M)[None, :]
    log_z = np.log(np.exp(shifted).sum(axis=2))
    value = float((log_z - shifted[rows[0], rows[1], targets]).mean())

    d_logits = p
    d_logits[rows[0], rows[1], targets] -= 1.0
    d_logits /= n * M

    d_z = np.einsum("npv,vh->nh", d_logits, wz)
    d_wz = np.einsum("npv,nh->vh", d_logits, zs)
    d_wp = np.einsum("npv,ph->vh", d_logits, ae.pos)
    d_pos = np.einsum("npv,vh->ph", d_logits, wp)
    d_b = d_logits.sum(axis=(0, 1))

    d_embed = np.zeros_like(ae.embed)
    for i, ids in enumerate(masked_ids):
        np.add.at(d_embed, ids, d_z[i][None, :] / len(ids))

    d_dec_w = np.concatenate([d_wz, d_wp], axis=1)
    return value, [d_embed, d_pos, d_dec_w, d_b]


def train_autoencoder(
    queries: Sequence[np.ndarray],
    vocab_size: int,
    cfg: AutoencoderConfig = AutoencoderConfig(),
):
    """Fit the denoising autoencoder on a query corpus.

    Returns (params, checkpoints) where checkpoints is a list of
    (step, loss, token_accuracy, exact_fraction) measured at evenly
    spaced points.
    """
    if len(queries) < 1:
        raise ValueError("empty query corpus")
    clean = [content_tokens(q, cfg.max_len) for q in queries]
    if any(len(c) == 0 for c in clean):
        raise ValueError("query with no content tokens")
    ae = init_autoencoder(vocab_size, cfg)
    opt = AdamW(ae.param_arrays(), weight_decay=0.0)
    rng = make_rng(derive_seed(cfg.seed, "autoencoder_train"))
    every = max(cfg.steps // max(cfg.checkpoints, 1), 1)
    checkpoints = []

    order = rng.permutation(len(clean))
    pos = 0
    for step in range(cfg.steps):
        if pos + cfg.batch_size > len(clean):
            order = rng.permutation(len(clean))
            pos = 0
        batch = [clean[i] for i in order[pos : pos + cfg.batch_size]]
        pos += cfg.batch_size
        value, grads = _batch_loss_grads(ae, batch, rng, cfg.train_sigma, cfg.train_mask_prob)
        if not np.isfinite(value):
            raise RuntimeError(f"autoencoder training diverged at step {step}")
        opt.step(grads, warmup_linear_lr(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac))
        if (step + 1) % every == 0 or step == cfg.steps - 1:
            tok_acc, exact = roundtrip_stats(ae, clean)
            checkpoints.append((step + 1, value, tok_acc, exact))
    return ae, checkpoints


def generate_queries(
    ae: AutoencoderParams,
    x: np.ndarray,
    n: int,
    sigma: float,
    mask_prob: float,
    seed: int,
) -> List[np.ndarray]:
    """n perturbed reconstructions of x, deterministic given the seed.

    Each output is the greedy decode of Enc(mask(x)) + eps with
    eps ~ N(0, sigma^2 I); outputs never contain interior [PAD] tokens
    and never exceed the decoder's max length.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if not 0.0 <= mask_prob <= 1.0:
        raise ValueError("mask_prob must be in [0, 1]")
    tokens = content_tokens(x, ae.max_len)
    if tokens.size == 0:
        raise ValueError("cannot perturb an empty query")
    rng = make_rng(derive_seed(seed, "querygen"))
    out = []
    for _ in range(n):
        ids = tokens.copy()
        if mask_prob > 0:
            drop = rng.random(len(ids)) < mask_prob
            ids[drop] = MASK_ID
        z = encode_latent(ae, ids)
        if sigma > 0:
            z = z + rng.normal(0.0, sigma, size=z.shape)
        out.append(greedy_decode(ae, z))
    return out


# ---------------------------------------------------------------------------
# Generated-query interchange format
# ---------------------------------------------------------------------------


def write_generated_jsonl(records: Sequence[dict], path) -> None:
    """Records carry source_query_id, generated_tokens, sigma, mask_prob,
    seed."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "source_query_id": int(r["source_query_id"]),
                "generated_tokens": [int(t) for t in r["generated_tokens"]],
                "sigma": float(r["sigma"]),
                "mask_prob": float(r["mask_prob"]),
                "seed": int(r["seed"]),
            }) + "\n")


def read_generated_jsonl(path) -> List[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                obj["generated_tokens"] = np.asarray(obj["generated_tokens"], dtype=np.int64)
                out.append(obj)
    return out
