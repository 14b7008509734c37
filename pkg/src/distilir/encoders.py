"""Tokenization, desk-scale encoders, scorers, and checkpoint I/O.

Encoders are intentionally tiny Transformer-like stacks: B blocks of
(residual attention-lite, residual position-wise affine+tanh) over an
embedding table, followed by a position-wise output map to the
embedding dimension ``k``.  No layer norm, no dropout, no multi-head
attention: gradients are hand-derived and checked by finite
differences, so the architecture stays small enough to reason about.

First-token pooling plays the role of [CLS]-pooling.  Dual pooling
produces a (proxy query, proxy document) embedding pair from one joint
forward pass; the segment-weighted variant sums each segment's token
embeddings scaled by 1/sqrt(segment length).
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import _kernels
from .numerics import FLOAT, make_rng

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
MASK_ID = 3
UNK_ID = 4
RESERVED = ("[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]")

NEG_BIAS = -1e30  # additive mask; exp() underflows to exactly 0.0


class PoolingKind(str, enum.Enum):
    FIRST_TOKEN = "first_token"
    MEAN = "mean"
    SEGMENT_WEIGHTED_MEAN = "segment_weighted_mean"
    DUAL_SPECIAL_TOKEN = "dual_special_token"


DUAL_POOLINGS = (PoolingKind.DUAL_SPECIAL_TOKEN, PoolingKind.SEGMENT_WEIGHTED_MEAN)


# ---------------------------------------------------------------------------
# Vocabulary and tokenization
# ---------------------------------------------------------------------------


@dataclass
class Vocab:
    """Whitespace-token vocabulary with fixed reserved ids 0..4."""

    token_to_id: Dict[str, int]
    id_to_token: List[str]

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def to_json_obj(self):
        return {"tokens": self.id_to_token[len(RESERVED):]}

    @classmethod
    def from_json_obj(cls, obj) -> "Vocab":
        return build_vocab_from_tokens(obj["tokens"])


def build_vocab_from_tokens(tokens: Sequence[str]) -> Vocab:
    id_to_token = list(RESERVED) + list(tokens)
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    if len(token_to_id) != len(id_to_token):
        raise ValueError("duplicate token in vocabulary")
    return Vocab(token_to_id, id_to_token)


def build_vocab(texts: Sequence[str]) -> Vocab:
    """Build a vocabulary from a corpus (min frequency 1, first-seen order)."""
    seen = {}
    for text in texts:
        for tok in text.split():
            if tok not in seen and tok not in RESERVED:
                seen[tok] = None
    return build_vocab_from_tokens(list(seen))


def tokenize(
    text: str,
    vocab: Vocab,
    add_specials: bool = True,
    max_len: Optional[int] = None,
) -> np.ndarray:
    """Whitespace tokenization; unknown tokens map to [UNK].

    With ``add_specials`` a [CLS] is prepended.  If ``max_len`` is given
    the sequence is truncated (tail first) to that many ids.
    """
    ids = [vocab.token_to_id.get(tok, UNK_ID) for tok in text.split()]
    if add_specials:
        ids = [CLS_ID] + ids
    if max_len is not None and len(ids) > max_len:
        ids = ids[:max_len]
    return np.asarray(ids, dtype=np.int64)


def detokenize(ids: Sequence[int], vocab: Vocab) -> str:
    """Inverse of tokenize for whitespace-normalized text; drops specials."""
    words = []
    for i in ids:
        i = int(i)
        if i < len(RESERVED):
            continue
        words.append(vocab.id_to_token[i])
    return " ".join(words)


# ---------------------------------------------------------------------------
# Joint (cross-encoder) inputs
# ---------------------------------------------------------------------------


@dataclass
class JointInput:
    """Token layout [CLS] q [SEP] d [SEP] plus segment boundaries."""

    ids: np.ndarray
    query_start: int
    query_end: int  # exclusive
    doc_start: int
    doc_end: int  # exclusive
    first_sep: int

    @property
    def query_positions(self) -> range:
        return range(self.query_start, self.query_end)

    @property
    def doc_positions(self) -> range:
        return range(self.doc_start, self.doc_end)


def _strip_specials(seq: np.ndarray) -> List[int]:
    return [int(t) for t in seq if int(t) not in (PAD_ID, CLS_ID, SEP_ID)]


def build_joint_input(
    q: Optional[np.ndarray],
    d: np.ndarray,
    max_len: int = 0,
    empty_query: bool = False,
) -> JointInput:
    """Concatenate a query/document pair into one cross-encoder input.

    When the combined length exceeds ``max_len`` (if positive) the
    document tail is truncated, never the query, and the final [SEP]
    is preserved.  ``empty_query`` yields [CLS] [SEP] d [SEP].
    """
    q_tokens = [] if (empty_query or q is None) else _strip_specials(q)
    d_tokens = _strip_specials(d)
    if max_len and max_len > 0:
        budget = max_len - 3 - len(q_tokens)
        if budget < 0:
            raise ValueError("query too long for joint input")
        d_tokens = d_tokens[:budget]
    ids = [CLS_ID] + q_tokens + [SEP_ID] + d_tokens + [SEP_ID]
    q_start = 1
    q_end = 1 + len(q_tokens)
    first_sep = q_end
    d_start = first_sep + 1
    d_end = d_start + len(d_tokens)
    return JointInput(
        ids=np.asarray(ids, dtype=np.int64),
        query_start=q_start,
        query_end=q_end,
        doc_start=d_start,
        doc_end=d_end,
        first_sep=first_sep,
    )


# ---------------------------------------------------------------------------
# Encoder parameters
# ---------------------------------------------------------------------------


@dataclass
class Block:
    attn: np.ndarray  # (h, h) attention mixing matrix
    ff_w: np.ndarray  # (h, h)
    ff_b: np.ndarray  # (h,)


@dataclass
class EncoderParams:
    vocab_size: int
    hidden: int
    out_dim: int
    pooling: PoolingKind
    embed: np.ndarray  # (V, h)
    blocks: List[Block]
    w_out: np.ndarray  # (h, k)
    b_out: np.ndarray  # (k,)

    def param_arrays(self) -> List[np.ndarray]:
        arrays = [self.embed]
        for blk in self.blocks:
            arrays += [blk.attn, blk.ff_w, blk.ff_b]
        arrays += [self.w_out, self.b_out]
        return arrays

    def param_names(self) -> List[str]:
        names = ["embed"]
        for i in range(len(self.blocks)):
            names += [f"block{i}.attn", f"block{i}.ff_w", f"block{i}.ff_b"]
        names += ["w_out", "b_out"]
        return names

    def param_count(self) -> int:
        return sum(a.size for a in self.param_arrays())

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            vocab_size=self.vocab_size,
            hidden=self.hidden,
            out_dim=self.out_dim,
            pooling=self.pooling,
            embed=self.embed.copy(),
            blocks=[Block(b.attn.copy(), b.ff_w.copy(), b.ff_b.copy()) for b in self.blocks],
            w_out=self.w_out.copy(),
            b_out=self.b_out.copy(),
        )


def init_encoder(
    vocab_size: int,
    hidden: int,
    out_dim: int,
    num_blocks: int,
    pooling: PoolingKind,
    seed: int,
    embed_scale: float = 0.5,
) -> EncoderParams:
    """Random encoder; matrix scales ~1/sqrt(fan-in) keep tanh unsaturated."""
    rng = make_rng(seed)
    scale = 1.0 / np.sqrt(hidden)
    blocks = [
        Block(
            attn=rng.normal(0.0, scale, size=(hidden, hidden)),
            ff_w=rng.normal(0.0, scale, size=(hidden, hidden)),
            ff_b=np.zeros(hidden, dtype=FLOAT),
        )
        for _ in range(num_blocks)
    ]
    return EncoderParams(
        vocab_size=vocab_size,
        hidden=hidden,
        out_dim=out_dim,
        pooling=pooling,
        embed=rng.normal(0.0, embed_scale, size=(vocab_size, hidden)),
        blocks=blocks,
        w_out=rng.normal(0.0, scale, size=(hidden, out_dim)),
        b_out=np.zeros(out_dim, dtype=FLOAT),
    )


def zero_grads(enc: EncoderParams) -> List[np.ndarray]:
    return [np.zeros_like(a) for a in enc.param_arrays()]


# ---------------------------------------------------------------------------
# Batched forward / backward
# ---------------------------------------------------------------------------


@dataclass
class Segments:
    """Per-row segment boundaries for a padded joint batch."""

    query_start: np.ndarray
    query_end: np.ndarray
    doc_start: np.ndarray
    doc_end: np.ndarray
    first_sep: np.ndarray

    @classmethod
    def from_joint(cls, joints: Sequence[JointInput]) -> "Segments":
        return cls(
            query_start=np.asarray([j.query_start for j in joints], dtype=np.int64),
            query_end=np.asarray([j.query_end for j in joints], dtype=np.int64),
            doc_start=np.asarray([j.doc_start for j in joints], dtype=np.int64),
            doc_end=np.asarray([j.doc_end for j in joints], dtype=np.int64),
            first_sep=np.asarray([j.first_sep for j in joints], dtype=np.int64),
        )


def pad_batch(seqs: Sequence[np.ndarray]) -> np.ndarray:
    """Stack variable-length id sequences into a [PAD]-padded matrix."""
    if not seqs:
        raise ValueError("empty batch")
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD_ID, dtype=np.int64)
    for i, s in enumerate(seqs):
        if len(s) == 0:
            raise ValueError("empty sequence in batch")
        out[i, : len(s)] = s
    return out


@dataclass
class ForwardCache:
    ids: np.ndarray
    mask: np.ndarray  # (n, T) bool, True at real tokens
    block_caches: List[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]
    x_final: np.ndarray  # input to the output map
    tokens: np.ndarray  # (n, T, k) final token embeddings


def encoder_tokens(enc: EncoderParams, ids: np.ndarray) -> ForwardCache:
    """Run the stack over a padded id matrix; returns all intermediates."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError("ids must be (n, T)")
    if ids.max(initial=0) >= enc.vocab_size or ids.min(initial=0) < 0:
        raise ValueError("out-of-vocabulary id")
    mask = ids != PAD_ID
    if not mask.any(axis=1).all():
        raise ValueError("sequence with no real tokens")
    key_bias = np.where(mask, 0.0, NEG_BIAS)[:, None, :]

    X = enc.embed[ids]
    block_caches = []
    for blk in enc.blocks:
        x_attn_in = X
        Y, P = _kernels.attention_forward(X, blk.attn, key_bias)
        X, F = _kernels.ffn_forward(Y, blk.ff_w, blk.ff_b)
        block_caches.append((x_attn_in, P, Y, F))
    tokens = X @ enc.w_out + enc.b_out
    return ForwardCache(ids=ids, mask=mask, block_caches=block_caches, x_final=X, tokens=tokens)


def encoder_backward_tokens(
    enc: EncoderParams, cache: ForwardCache, d_tokens: np.ndarray
) -> List[np.ndarray]:
    """Backpropagate d(loss)/d(tokens) to gradients in param_arrays order.

    The pad mask needs no explicit handling here: masked attention
    entries are exactly zero in P, so no gradient crosses them.
    """
    dW_out = np.einsum("nti,ntj->ij", cache.x_final, d_tokens)
    db_out = d_tokens.sum(axis=(0, 1))
    dX = d_tokens @ enc.w_out.T

    block_grads: List[Tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for blk, (x_attn_in, P, Y, F) in zip(reversed(enc.blocks), reversed(cache.block_caches)):
        dX, dW, db = _kernels.ffn_backward(Y, blk.ff_w, F, dX)
        dX, dM = _kernels.attention_backward(x_attn_in, blk.attn, P, dX)
        block_grads.append((dM, dW, db))
    block_grads.reverse()

    d_embed = np.zeros_like(enc.embed)
    np.add.at(d_embed, cache.ids.ravel(), dX.reshape(-1, enc.hidden))

    grads = [d_embed]
    for dM, dW, db in block_grads:
        grads += [dM, dW, db]
    grads += [dW_out, db_out]
    return grads


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def _segment_weights(segs: Segments, n: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """(wq, wd) of shape (n, T): 1/sqrt(len) inside each segment, 0 outside."""
    pos = np.arange(width)[None, :]
    q_len = (segs.query_end - segs.query_start).astype(FLOAT)
    d_len = (segs.doc_end - segs.doc_start).astype(FLOAT)
    if np.any(d_len < 1):
        raise ValueError("empty segment")
    in_q = (pos >= segs.query_start[:, None]) & (pos < segs.query_end[:, None])
    in_d = (pos >= segs.doc_start[:, None]) & (pos < segs.doc_end[:, None])
    wq = np.where(in_q, 1.0 / np.sqrt(np.maximum(q_len, 1.0))[:, None], 0.0)
    wd = np.where(in_d, 1.0 / np.sqrt(d_len)[:, None], 0.0)
    return wq, wd


def pool_forward(
    cache: ForwardCache, pooling: PoolingKind, segments: Optional[Segments] = None
):
    """Pool final token embeddings; dual kinds return an embedding pair."""
    tokens, mask = cache.tokens, cache.mask
    n = tokens.shape[0]
    if pooling == PoolingKind.FIRST_TOKEN:
        return tokens[:, 0, :].copy()
    if pooling == PoolingKind.MEAN:
        counts = mask.sum(axis=1).astype(FLOAT)
        return np.einsum("nt,ntk->nk", mask.astype(FLOAT), tokens) / counts[:, None]
    if segments is None:
        raise ValueError(f"{pooling.value} pooling requires joint-input segments")
    if pooling == PoolingKind.DUAL_SPECIAL_TOKEN:
        rows = np.arange(n)
        return tokens[rows, 0, :].copy(), tokens[rows, segments.first_sep, :].copy()
    if pooling == PoolingKind.SEGMENT_WEIGHTED_MEAN:
        wq, wd = _segment_weights(segments, n, tokens.shape[1])
        return np.einsum("nt,ntk->nk", wq, tokens), np.einsum("nt,ntk->nk", wd, tokens)
    raise ValueError(f"unknown pooling {pooling}")


def pool_backward(
    cache: ForwardCache,
    pooling: PoolingKind,
    d_pooled,
    segments: Optional[Segments] = None,
) -> np.ndarray:
    """Scatter pooled-embedding gradients back over token positions."""
    tokens, mask = cache.tokens, cache.mask
    n, width, k = tokens.shape
    d_tokens = np.zeros_like(tokens)
    if pooling == PoolingKind.FIRST_TOKEN:
        d_tokens[:, 0, :] = d_pooled
    elif pooling == PoolingKind.MEAN:
        counts = mask.sum(axis=1).astype(FLOAT)
        d_tokens += (mask.astype(FLOAT) / counts[:, None])[:, :, None] * d_pooled[:, None, :]
    elif pooling == PoolingKind.DUAL_SPECIAL_TOKEN:
        d_q, d_d = d_pooled
        rows = np.arange(n)
        d_tokens[rows, 0, :] += d_q
        np.add.at(d_tokens, (rows, segments.first_sep), d_d)
    elif pooling == PoolingKind.SEGMENT_WEIGHTED_MEAN:
        d_q, d_d = d_pooled
        wq, wd = _segment_weights(segments, n, width)
        d_tokens += wq[:, :, None] * d_q[:, None, :]
        d_tokens += wd[:, :, None] * d_d[:, None, :]
    else:
        raise ValueError(f"unknown pooling {pooling}")
    return d_tokens


def encode_batch(enc: EncoderParams, seqs: Sequence[np.ndarray]) -> Tuple[np.ndarray, ForwardCache]:
    """Embed a batch of single (non-joint) sequences: (n, k) plus cache."""
    if enc.pooling in DUAL_POOLINGS:
        raise ValueError("dual pooling requires a joint input")
    cache = encoder_tokens(enc, pad_batch(seqs))
    return pool_forward(cache, enc.pooling), cache


def encode(enc: EncoderParams, seq: np.ndarray) -> np.ndarray:
    """Embedding of a single token sequence (shape (k,))."""
    pooled, _ = encode_batch(enc, [np.asarray(seq, dtype=np.int64)])
    return pooled[0]


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass
class DEModel:
    """Dual encoder: separate (or shared) query and document towers."""

    query_encoder: EncoderParams
    doc_encoder: EncoderParams
    shared: bool = False

    def __post_init__(self):
        if self.shared and self.query_encoder is not self.doc_encoder:
            raise ValueError("shared DE must reference one parameter set")
        if self.query_encoder.out_dim != self.doc_encoder.out_dim:
            raise ValueError("query/document embedding dimensions differ")

    @property
    def out_dim(self) -> int:
        return self.query_encoder.out_dim

    def copy(self) -> "DEModel":
        if self.shared:
            enc = self.query_encoder.copy()
            return DEModel(enc, enc, shared=True)
        return DEModel(self.query_encoder.copy(), self.doc_encoder.copy())


@dataclass
class CEModel:
    """Cross encoder: one joint tower plus exactly one scoring head.

    ``w`` present -> classification head over the first-token embedding.
    ``w`` absent  -> dual pooling head (the encoder's pooling kind picks
    special-token vs segment-weighted-mean).
    """

    encoder: EncoderParams
    w: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.w is not None:
            if self.encoder.pooling != PoolingKind.FIRST_TOKEN:
                raise ValueError("classification head requires first-token pooling")
            if self.w.shape != (self.encoder.out_dim,):
                raise ValueError("classification vector shape mismatch")
        elif self.encoder.pooling not in DUAL_POOLINGS:
            raise ValueError("dual-pooled CE requires a dual pooling kind")

    @property
    def is_dual(self) -> bool:
        return self.w is None

    def copy(self) -> "CEModel":
        return CEModel(self.encoder.copy(), None if self.w is None else self.w.copy())


def de_score(q_emb: np.ndarray, d_emb: np.ndarray) -> float:
    """Relevance of a (query, document) embedding pair: inner product."""
    q_emb = np.asarray(q_emb, dtype=FLOAT)
    d_emb = np.asarray(d_emb, dtype=FLOAT)
    if q_emb.shape != d_emb.shape:
        raise ValueError(f"dimension mismatch: {q_emb.shape} vs {d_emb.shape}")
    return float(q_emb @ d_emb)


def ce_score_cls(ce: CEModel, q: np.ndarray, d: np.ndarray, max_len: int = 0) -> float:
    """Classification-head CE score <w, first-token joint embedding>."""
    if ce.is_dual:
        raise ValueError("model has a dual-pooling head, not a classification vector")
    joint = build_joint_input(q, d, max_len=max_len)
    cache = encoder_tokens(ce.encoder, joint.ids[None, :])
    pooled = pool_forward(cache, PoolingKind.FIRST_TOKEN)
    return float(ce.w @ pooled[0])


def ce_dual_pool(
    ce: CEModel, q: Optional[np.ndarray], d: np.ndarray, max_len: int = 0, empty_query: bool = False
) -> Tuple[np.ndarray, np.ndarray, float]:
    """Proxy (query, document) embeddings and their inner-product score."""
    if not ce.is_dual:
        raise ValueError("model has a classification head, not dual pooling")
    joint = build_joint_input(q, d, max_len=max_len, empty_query=empty_query)
    segs = Segments.from_joint([joint])
    cache = encoder_tokens(ce.encoder, joint.ids[None, :])
    proxy_q, proxy_d = pool_forward(cache, ce.encoder.pooling, segs)
    return proxy_q[0], proxy_d[0], float(proxy_q[0] @ proxy_d[0])


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


@dataclass
class Projection:
    """Trainable affine map from student to teacher embedding space."""

    weight: np.ndarray  # (k_out, k_in)
    bias: np.ndarray  # (k_out,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def param_arrays(self) -> List[np.ndarray]:
        return [self.weight, self.bias]

    def copy(self) -> "Projection":
        return Projection(self.weight.copy(), self.bias.copy())


def init_projection(in_dim: int, out_dim: int, seed: int) -> Projection:
    """Identity when square, Xavier-uniform otherwise; zero bias."""
    if in_dim == out_dim:
        weight = np.eye(out_dim, dtype=FLOAT)
    else:
        rng = make_rng(seed)
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        weight = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return Projection(weight=weight, bias=np.zeros(out_dim, dtype=FLOAT))


def project(p: Projection, emb: np.ndarray) -> np.ndarray:
    """Apply the affine map to one embedding or a batch of them."""
    emb = np.asarray(emb, dtype=FLOAT)
    if emb.shape[-1] != p.in_dim:
        raise ValueError(f"dimension mismatch: {emb.shape[-1]} vs {p.in_dim}")
    return emb @ p.weight.T + p.bias


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    """Deterministic JSON with shortest round-trip float representation."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _encoder_obj(enc: EncoderParams):
    return {
        "vocab_size": enc.vocab_size,
        "hidden": enc.hidden,
        "out_dim": enc.out_dim,
        "num_blocks": len(enc.blocks),
        "pooling": enc.pooling.value,
        "arrays": {name: arr.tolist() for name, arr in zip(enc.param_names(), enc.param_arrays())},
    }


def _encoder_from_obj(obj) -> EncoderParams:
    arrays = obj["arrays"]
    blocks = [
        Block(
            attn=np.asarray(arrays[f"block{i}.attn"], dtype=FLOAT),
            ff_w=np.asarray(arrays[f"block{i}.ff_w"], dtype=FLOAT),
            ff_b=np.asarray(arrays[f"block{i}.ff_b"], dtype=FLOAT),
        )
        for i in range(obj["num_blocks"])
    ]
    return EncoderParams(
        vocab_size=obj["vocab_size"],
        hidden=obj["hidden"],
        out_dim=obj["out_dim"],
        pooling=PoolingKind(obj["pooling"]),
        embed=np.asarray(arrays["embed"], dtype=FLOAT),
        blocks=blocks,
        w_out=np.asarray(arrays["w_out"], dtype=FLOAT),
        b_out=np.asarray(arrays["b_out"], dtype=FLOAT),
    )


def checkpoint_obj(model) -> dict:
    """JSON-serializable checkpoint for any model this package trains."""
    if isinstance(model, DEModel):
        body = {
            "model_kind": "dual_encoder",
            "shared": model.shared,
            "query_encoder": _encoder_obj(model.query_encoder),
        }
        if not model.shared:
            body["doc_encoder"] = _encoder_obj(model.doc_encoder)
        return {"format_version": FORMAT_VERSION, **body}
    if isinstance(model, CEModel):
        body = {
            "model_kind": "cross_encoder",
            "encoder": _encoder_obj(model.encoder),
            "head": "classification" if model.w is not None else "dual_pool",
        }
        if model.w is not None:
            body["w"] = model.w.tolist()
        return {"format_version": FORMAT_VERSION, **body}
    if isinstance(model, EncoderParams):
        return {
            "format_version": FORMAT_VERSION,
            "model_kind": "encoder",
            "encoder": _encoder_obj(model),
        }
    if isinstance(model, Projection):
        return {
            "format_version": FORMAT_VERSION,
            "model_kind": "projection",
            "weight": model.weight.tolist(),
            "bias": model.bias.tolist(),
        }
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def model_from_checkpoint_obj(obj):
    if obj.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {obj.get('format_version')!r}")
    kind = obj["model_kind"]
    if kind == "dual_encoder":
        q = _encoder_from_obj(obj["query_encoder"])
        if obj["shared"]:
            return DEModel(q, q, shared=True)
        return DEModel(q, _encoder_from_obj(obj["doc_encoder"]))
    if kind == "cross_encoder":
        w = np.asarray(obj["w"], dtype=FLOAT) if obj["head"] == "classification" else None
        return CEModel(_encoder_from_obj(obj["encoder"]), w)
    if kind == "encoder":
        return _encoder_from_obj(obj["encoder"])
    if kind == "projection":
        return Projection(
            weight=np.asarray(obj["weight"], dtype=FLOAT),
            bias=np.asarray(obj["bias"], dtype=FLOAT),
        )
    raise ValueError(f"unknown model_kind {kind!r}")


def checkpoint_bytes(model) -> bytes:
    return canonical_json(checkpoint_obj(model)).encode("utf-8")


def save_checkpoint(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return model_from_checkpoint_obj(json.loads(fh.read().decode("utf-8")))
