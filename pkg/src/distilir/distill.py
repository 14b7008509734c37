"""Teacher training, student distillation, and the optimizer schedule.

Students come in two configurations:

* ``symmetric``: both towers trainable at the student size.
* ``inherit_docs``: asymmetric; only a query tower and a projection are
  trainable, documents are served by a frozen index produced by the
  teacher.  The document-side embedding-matching weight is forced to 0
  in this mode (those embeddings are aligned by construction).

The combined objective is a weighted sum of the one-hot loss, a
score-distillation loss, query/document embedding-matching losses, and
(for generated queries) an extra query-side matching term.  Reported
component values are unweighted; the applied objective is exactly
``sum(w_i * component_i)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import losses
from .datasim import Document, Query, TrainingExample
from .encoders import (
    CEModel,
    DEModel,
    EncoderParams,
    PoolingKind,
    Projection,
    Segments,
    Vocab,
    build_joint_input,
    encode_batch,
    encoder_backward_tokens,
    encoder_tokens,
    init_encoder,
    init_projection,
    pad_batch,
    pool_backward,
    pool_forward,
    project,
    tokenize,
)
from .numerics import FLOAT, derive_seed, make_rng
from .optim import AdamW, warmup_linear_lr
from .retrieval import DocumentIndex, build_index


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, detail: str = "non-finite loss"):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class ArchSpec:
    hidden: int = 32
    out_dim: int = 16
    num_blocks: int = 1
    shared: bool = False
    pooling: PoolingKind = PoolingKind.MEAN


@dataclass
class LossWeights:
    """Weights for the combined objective (all >= 0, at least one > 0).

    ``score_loss`` picks the distillation form: softmax_ce, binary_ce,
    or mse.
    """

    onehot: float = 1.0
    score_distill: float = 1.0
    score_loss: str = "softmax_ce"
    embed_q: float = 0.0
    embed_d: float = 0.0
    aug_embed_q: float = 0.0
    recon: float = 0.0

    def __post_init__(self):
        vals = (self.onehot, self.score_distill, self.embed_q, self.embed_d,
                self.aug_embed_q, self.recon)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")
        if self.score_loss not in losses.SCORE_DISTILL_LOSSES:
            raise ValueError(f"unknown score loss {self.score_loss!r}")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 8
    peak_lr: float = 1e-3  # desk scale; 1e-5-ish applies to full-size encoders
    warmup_frac: float = 0.05
    seed: int = 0
    temperature: float = 1.0
    in_batch_negatives: bool = False
    weight_decay: float = 0.01


@dataclass
class StudentConfig:
    mode: str = "symmetric"  # or "inherit_docs"
    hidden: int = 16
    out_dim: int = 8
    num_blocks: int = 1
    pooling: PoolingKind = PoolingKind.MEAN
    shared: bool = False  # symmetric mode: one tower for queries and docs

    def __post_init__(self):
        if self.mode not in ("symmetric", "inherit_docs"):
            raise ValueError(f"unknown student mode {self.mode!r}")


HISTORY_COLUMNS = [
    "step", "lr", "total", "onehot", "score_distill",
    "embed_q", "embed_d", "aug_embed_q", "recon",
]


@dataclass
class TrainHistory:
    rows: List[Dict[str, float]] = field(default_factory=list)

    def append(self, step: int, lr: float, components: Dict[str, float]) -> None:
        row = {c: 0.0 for c in HISTORY_COLUMNS}
        row["step"] = step
        row["lr"] = lr
        row.update(components)
        self.rows.append(row)

    def component(self, name: str) -> np.ndarray:
        return np.asarray([r[name] for r in self.rows], dtype=FLOAT)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for r in self.rows:
                writer.writerow([repr(float(r[c])) if c != "step" else int(r[c])
                                 for c in HISTORY_COLUMNS])


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate at a step: linear warmup to peak, linear decay to 0."""
    return warmup_linear_lr(step, cfg.steps, cfg.peak_lr, cfg.warmup_frac)


# ---------------------------------------------------------------------------
# Tokenized training data
# ---------------------------------------------------------------------------


@dataclass
class TokenizedData:
    vocab: Vocab
    query_tokens: Dict[int, np.ndarray]
    doc_tokens: Dict[int, np.ndarray]
    examples: List[TrainingExample]
    max_joint_len: int = 0


def tokenize_data(
    documents: Sequence[Document],
    queries: Sequence[Query],
    examples: Sequence[TrainingExample],
    vocab: Vocab,
    max_query_len: int = 0,
    max_doc_len: int = 0,
    max_joint_len: int = 0,
) -> TokenizedData:
    return TokenizedData(
        vocab=vocab,
        query_tokens={
            q.query_id: tokenize(q.text, vocab, max_len=max_query_len or None)
            for q in queries
        },
        doc_tokens={
            d.doc_id: tokenize(d.text, vocab, max_len=max_doc_len or None)
            for d in documents
        },
        examples=list(examples),
        max_joint_len=max_joint_len,
    )


def _positive_doc(ex: TrainingExample) -> int:
    for did, y in zip(ex.doc_ids, ex.labels):
        if y == 1:
            return did
    raise ValueError(f"example for query {ex.query_id} has no positive")


def _batch_order(n: int, batch_size: int, steps: int, seed: int):
    """Deterministic shuffled-epoch batching."""
    rng = make_rng(derive_seed(seed, "batching"))
    order = rng.permutation(n)
    pos = 0
    for _ in range(steps):
        if pos + batch_size > n:
            order = rng.permutation(n)
            pos = 0
        yield order[pos : pos + batch_size]
        pos += batch_size


def _candidate_lists(
    batch: Sequence[TrainingExample], in_batch_negatives: bool
) -> List[Tuple[List[int], List[int]]]:
    """Per-example (doc_ids, labels), optionally extended with the other
    batch examples' positives as extra negatives."""
    out = []
    positives = [_positive_doc(ex) for ex in batch] if in_batch_negatives else None
    for i, ex in enumerate(batch):
        doc_ids = list(ex.doc_ids)
        labels = list(ex.labels)
        if in_batch_negatives:
            extra = [p for j, p in enumerate(positives) if j != i]
            doc_ids += extra
            labels += [0] * len(extra)
        out.append((doc_ids, labels))
    return out


def _unique_docs(cands: Sequence[Tuple[List[int], List[int]]]):
    """Deduplicated doc ids plus per-example row indices (in-batch
    negatives repeat each positive across the whole batch)."""
    row_of: Dict[int, int] = {}
    uniq: List[int] = []
    rows_per_example: List[np.ndarray] = []
    for doc_ids, _ in cands:
        rows = []
        for did in doc_ids:
            if did not in row_of:
                row_of[did] = len(uniq)
                uniq.append(did)
            rows.append(row_of[did])
        rows_per_example.append(np.asarray(rows, dtype=np.int64))
    return uniq, rows_per_example


# ---------------------------------------------------------------------------
# Teacher training
# ---------------------------------------------------------------------------


def train_teacher(
    model_kind: str,
    data: TokenizedData,
    cfg: TrainConfig,
    arch: ArchSpec = ArchSpec(),
    dual_pooling: PoolingKind = PoolingKind.DUAL_SPECIAL_TOKEN,
    recon_weight: float = 1.0,
):
    """Train a teacher of kind "de", "ce", or "ce_dual" from scratch.

    Returns (model, TrainHistory).  The dual-pooled CE optimizes the
    one-hot loss plus ``recon_weight`` times the token-reconstruction
    loss (with a jointly trained decoder that is discarded afterwards).
    """
    if not data.examples:
        raise ValueError("empty dataset")
    for ex in data.examples:
        _positive_doc(ex)
    if model_kind == "de":
        return _train_de_teacher(data, cfg, arch)
    if model_kind == "ce":
        return _train_ce_teacher(data, cfg, arch, head="cls", recon_weight=0.0)
    if model_kind == "ce_dual":
        return _train_ce_teacher(
            data, cfg, arch, head="dual", dual_pooling=dual_pooling, recon_weight=recon_weight
        )
    raise ValueError(f"unknown teacher kind {model_kind!r}")


def _train_de_teacher(data: TokenizedData, cfg: TrainConfig, arch: ArchSpec):
    vocab_size = data.vocab.size
    q_enc = init_encoder(vocab_size, arch.hidden, arch.out_dim, arch.num_blocks,
                         arch.pooling, derive_seed(cfg.seed, "teacher_q"))
    d_enc = q_enc if arch.shared else init_encoder(
        vocab_size, arch.hidden, arch.out_dim, arch.num_blocks,
        arch.pooling, derive_seed(cfg.seed, "teacher_d"))
    model = DEModel(q_enc, d_enc, shared=arch.shared)

    params = q_enc.param_arrays() + ([] if arch.shared else d_enc.param_arrays())
    opt = AdamW(params, weight_decay=cfg.weight_decay)
    history = TrainHistory()

    for step, idxs in enumerate(_batch_order(len(data.examples), cfg.batch_size,
                                             cfg.steps, cfg.seed)):
        batch = [data.examples[i] for i in idxs]
        cands = _candidate_lists(batch, cfg.in_batch_negatives)
        q_seqs = [data.query_tokens[ex.query_id] for ex in batch]
        uniq_docs, rows_per_example = _unique_docs(cands)
        d_seqs = [data.doc_tokens[did] for did in uniq_docs]

        q_emb, q_cache = encode_batch(q_enc, q_seqs)
        d_emb, d_cache = encode_batch(d_enc, d_seqs)

        n = len(batch)
        d_q = np.zeros_like(q_emb)
        d_d = np.zeros_like(d_emb)
        total = 0.0
        for i, (rows_i, (_, labels)) in enumerate(zip(rows_per_example, cands)):
            rows = d_emb[rows_i]
            scores = rows @ q_emb[i]
            res = losses.softmax_ce_onehot(scores, labels)
            total += res.value
            g = res.grad / n
            d_q[i] += g @ rows
            np.add.at(d_d, rows_i, np.outer(g, q_emb[i]))
        onehot = total / n
        if not np.isfinite(onehot):
            raise TrainingDiverged(step)

        gq = encoder_backward_tokens(
            q_enc, q_cache, pool_backward(q_cache, q_enc.pooling, d_q))
        gd = encoder_backward_tokens(
            d_enc, d_cache, pool_backward(d_cache, d_enc.pooling, d_d))
        grads = [a + b for a, b in zip(gq, gd)] if arch.shared else gq + gd
        opt.step(grads, lr_at(step, cfg))
        history.append(step, lr_at(step, cfg), {"onehot": onehot, "total": onehot})
    return model, history


def _train_ce_teacher(
    data: TokenizedData,
    cfg: TrainConfig,
    arch: ArchSpec,
    head: str,
    dual_pooling: PoolingKind = PoolingKind.DUAL_SPECIAL_TOKEN,
    recon_weight: float = 1.0,
):
    if cfg.in_batch_negatives:
        raise ValueError("in-batch negatives are a dual-encoder training option")
    vocab_size = data.vocab.size
    pooling = PoolingKind.FIRST_TOKEN if head == "cls" else dual_pooling
    enc = init_encoder(vocab_size, arch.hidden, arch.out_dim, arch.num_blocks,
                       pooling, derive_seed(cfg.seed, "teacher_joint"))
    rng = make_rng(derive_seed(cfg.seed, "teacher_head"))
    if head == "cls":
        w = rng.normal(0.0, 1.0 / np.sqrt(arch.out_dim), size=arch.out_dim)
        model = CEModel(enc, w)
        params = enc.param_arrays() + [w]
        decay = [True] * len(enc.param_arrays()) + [False]
        decoder = None
    else:
        model = CEModel(enc, None)
        decoder = Projection(
            weight=rng.normal(0.0, 1.0 / np.sqrt(arch.out_dim), size=(vocab_size, arch.out_dim)),
            bias=np.zeros(vocab_size, dtype=FLOAT),
        )
        params = enc.param_arrays() + [decoder.weight, decoder.bias]
        decay = [a.ndim >= 2 for a in enc.param_arrays()] + [True, False]
    opt = AdamW(params, weight_decay=cfg.weight_decay, decay_mask=decay)
    history = TrainHistory()

    for step, idxs in enumerate(_batch_order(len(data.examples), cfg.batch_size,
                                             cfg.steps, cfg.seed)):
        batch = [data.examples[i] for i in idxs]
        joints = []
        spans = []  # (offset, L) per example
        for ex in batch:
            spans.append((len(joints), len(ex.doc_ids)))
            q_seq = data.query_tokens[ex.query_id]
            for did in ex.doc_ids:
                joints.append(build_joint_input(q_seq, data.doc_tokens[did],
                                                max_len=data.max_joint_len))
        segs = Segments.from_joint(joints)
        cache = encoder_tokens(enc, pad_batch([j.ids for j in joints]))

        n = len(batch)
        components: Dict[str, float] = {}
        if head == "cls":
            pooled = pool_forward(cache, PoolingKind.FIRST_TOKEN)
            scores_flat = pooled @ w
            d_pooled = np.zeros_like(pooled)
            d_w = np.zeros_like(w)
            total = 0.0
            for (off, L), ex in zip(spans, batch):
                res = losses.softmax_ce_onehot(scores_flat[off : off + L], ex.labels)
                total += res.value
                g = res.grad / n
                d_pooled[off : off + L] += np.outer(g, w)
                d_w += g @ pooled[off : off + L]
            onehot = total / n
            components = {"onehot": onehot, "total": onehot}
            if not np.isfinite(onehot):
                raise TrainingDiverged(step)
            d_tokens = pool_backward(cache, PoolingKind.FIRST_TOKEN, d_pooled)
            grads = encoder_backward_tokens(enc, cache, d_tokens) + [d_w]
        else:
            pq, pd = pool_forward(cache, pooling, segs)
            scores_flat = np.einsum("nk,nk->n", pq, pd)
            d_pq = np.zeros_like(pq)
            d_pd = np.zeros_like(pd)
            total = 0.0
            for (off, L), ex in zip(spans, batch):
                res = losses.softmax_ce_onehot(scores_flat[off : off + L], ex.labels)
                total += res.value
                g = (res.grad / n)[:, None]
                d_pq[off : off + L] += g * pd[off : off + L]
                d_pd[off : off + L] += g * pq[off : off + L]
            onehot = total / n
            d_tokens = pool_backward(cache, pooling, (d_pq, d_pd), segs)

            valid = cache.mask
            recon = losses.reconstruction_loss(
                cache.tokens[valid], cache.ids[valid], decoder)
            d_tokens[valid] += recon_weight * recon.grad_embs
            total_loss = onehot + recon_weight * recon.value
            components = {"onehot": onehot, "recon": recon.value, "total": total_loss}
            if not np.isfinite(total_loss):
                raise TrainingDiverged(step)
            grads = encoder_backward_tokens(enc, cache, d_tokens) + [
                recon_weight * recon.grad_weight,
                recon_weight * recon.grad_bias,
            ]
        opt.step(grads, lr_at(step, cfg))
        history.append(step, lr_at(step, cfg), components)
    return model, history


# ---------------------------------------------------------------------------
# Distillation
# ---------------------------------------------------------------------------


@dataclass
class StudentModel:
    """A trained student plus whatever it needs to retrieve documents."""

    mode: str
    query_encoder: EncoderParams
    doc_encoder: Optional[EncoderParams]
    projection: Projection
    doc_index: Optional[DocumentIndex] = None

    def query_embedding(self, seq: np.ndarray) -> np.ndarray:
        """Effective query embedding for search (projected when the
        student scores against an inherited teacher-dimension index)."""
        emb, _ = encode_batch(self.query_encoder, [np.asarray(seq, dtype=np.int64)])
        if self.mode == "inherit_docs":
            return project(self.projection, emb[0])
        return emb[0]

    def query_embeddings(self, seqs: Sequence[np.ndarray]) -> np.ndarray:
        emb, _ = encode_batch(self.query_encoder, list(seqs))
        if self.mode == "inherit_docs":
            return project(self.projection, emb)
        return emb

    def raw_query_embeddings(self, seqs: Sequence[np.ndarray]) -> np.ndarray:
        emb, _ = encode_batch(self.query_encoder, list(seqs))
        return emb

    def retrieval_index(self, documents, tokenizer, batch_size: int = 64) -> DocumentIndex:
        if self.mode == "inherit_docs":
            return self.doc_index
        return build_index(self.doc_encoder, documents, tokenizer, batch_size=batch_size)


def student_checkpoint_obj(student: StudentModel) -> dict:
    from .encoders import FORMAT_VERSION, _encoder_obj

    obj = {
        "format_version": FORMAT_VERSION,
        "model_kind": "student",
        "mode": student.mode,
        "query_encoder": _encoder_obj(student.query_encoder),
        "projection": {
            "weight": student.projection.weight.tolist(),
            "bias": student.projection.bias.tolist(),
        },
    }
    if student.doc_encoder is student.query_encoder:
        obj["shared"] = True
    elif student.doc_encoder is not None:
        obj["doc_encoder"] = _encoder_obj(student.doc_encoder)
    return obj


def student_from_checkpoint_obj(obj, doc_index: Optional[DocumentIndex] = None) -> StudentModel:
    from .encoders import _encoder_from_obj

    q_enc = _encoder_from_obj(obj["query_encoder"])
    if obj.get("shared"):
        d_enc = q_enc
    elif "doc_encoder" in obj:
        d_enc = _encoder_from_obj(obj["doc_encoder"])
    else:
        d_enc = None
    return StudentModel(
        mode=obj["mode"],
        query_encoder=q_enc,
        doc_encoder=d_enc,
        projection=Projection(
            weight=np.asarray(obj["projection"]["weight"], dtype=FLOAT),
            bias=np.asarray(obj["projection"]["bias"], dtype=FLOAT),
        ),
        doc_index=doc_index,
    )


class Distiller:
    """Runs the combined distillation objective against a frozen teacher.

    Teacher embeddings and scores over the fixed candidate lists are
    precomputed once; the teacher's parameters are never touched.
    """

    def __init__(
        self,
        teacher,
        data: TokenizedData,
        student_cfg: StudentConfig,
        weights: LossWeights,
        train_cfg: TrainConfig,
        doc_index: Optional[DocumentIndex] = None,
        aug_queries: Optional[Sequence[Tuple[int, np.ndarray]]] = None,
    ):
        if student_cfg.mode == "inherit_docs" and doc_index is None:
            raise ValueError("inherit_docs mode requires a teacher document index")
        if weights.aug_embed_q > 0 and not aug_queries:
            raise ValueError("aug_embed_q weight set but no generated queries given")
        self.teacher = teacher
        self.data = data
        self.cfg = student_cfg
        self.train_cfg = train_cfg
        self.is_ce_teacher = isinstance(teacher, CEModel)
        if self.is_ce_teacher and not teacher.is_dual:
            raise ValueError("CE teachers must be dual-pooled to provide embeddings")
        if self.is_ce_teacher and train_cfg.in_batch_negatives:
            raise ValueError("in-batch negatives with a CE teacher are unsupported")

        # document-side matching is meaningless with an inherited index
        if student_cfg.mode == "inherit_docs" and weights.embed_d > 0:
            weights = replace(weights, embed_d=0.0)
        self.weights = weights

        self.teacher_dim = (teacher.out_dim if isinstance(teacher, DEModel)
                            else teacher.encoder.out_dim)
        seed = train_cfg.seed
        vocab_size = data.vocab.size
        self.q_enc = init_encoder(vocab_size, student_cfg.hidden, student_cfg.out_dim,
                                  student_cfg.num_blocks, student_cfg.pooling,
                                  derive_seed(seed, "student_q"))
        if student_cfg.mode != "symmetric":
            self.d_enc = None
        elif student_cfg.shared:
            self.d_enc = self.q_enc
        else:
            self.d_enc = init_encoder(vocab_size, student_cfg.hidden, student_cfg.out_dim,
                                      student_cfg.num_blocks, student_cfg.pooling,
                                      derive_seed(seed, "student_d"))
        self.proj = init_projection(student_cfg.out_dim, self.teacher_dim,
                                    derive_seed(seed, "projection"))
        self.doc_index = doc_index
        if doc_index is not None:
            doc_index.matrix.setflags(write=False)

        self._precompute_teacher(aug_queries or [])

        params = self.q_enc.param_arrays()
        decay = [a.ndim >= 2 for a in params]
        if self.d_enc is not None and self.d_enc is not self.q_enc:
            params += self.d_enc.param_arrays()
            decay += [a.ndim >= 2 for a in self.d_enc.param_arrays()]
        params += self.proj.param_arrays()
        decay += [False, False]  # projection excluded from weight decay
        self.opt = AdamW(params, weight_decay=train_cfg.weight_decay, decay_mask=decay)

    # -- teacher side ------------------------------------------------------

    def _teacher_doc_embs(self, doc_ids: Sequence[int]) -> np.ndarray:
        if self.doc_index is not None:
            return self.doc_index.rows(doc_ids)
        return np.stack([self._t_doc[did] for did in doc_ids])

    def _precompute_teacher(self, aug_queries):
        data = self.data
        qids = sorted({ex.query_id for ex in data.examples})
        all_dids = sorted(data.doc_tokens)

        if isinstance(self.teacher, DEModel):
            q_embs, _ = encode_batch(self.teacher.query_encoder,
                                     [data.query_tokens[q] for q in qids])
            self._t_query = {q: q_embs[i] for i, q in enumerate(qids)}
            if self.doc_index is None:
                d_embs, _ = encode_batch(self.teacher.doc_encoder,
                                         [data.doc_tokens[d] for d in all_dids])
                self._t_doc = {d: d_embs[i] for i, d in enumerate(all_dids)}
            self._t_scores = {}
            for ex in data.examples:
                tq = self._t_query[ex.query_id]
                rows = self._teacher_doc_embs(ex.doc_ids)
                self._t_scores[ex.query_id] = rows @ tq
            if aug_queries:
                a_embs, _ = encode_batch(self.teacher.query_encoder,
                                         [seq for _, seq in aug_queries])
                self._aug = [(a_embs[i], seq) for i, (_, seq) in enumerate(aug_queries)]
        else:
            enc = self.teacher.encoder
            golden = {ex.query_id: _positive_doc(ex) for ex in data.examples}
            # proxy query embeddings from the (query, positive doc) joint pass
            self._t_query = {}
            for lo in range(0, len(qids), 64):
                chunk = qids[lo : lo + 64]
                joints = [build_joint_input(data.query_tokens[q],
                                            data.doc_tokens[golden[q]],
                                            max_len=data.max_joint_len)
                          for q in chunk]
                cache = encoder_tokens(enc, pad_batch([j.ids for j in joints]))
                pq, _ = pool_forward(cache, enc.pooling, Segments.from_joint(joints))
                for i, q in enumerate(chunk):
                    self._t_query[q] = pq[i]
            if self.doc_index is None:
                self._t_doc = {}
                for lo in range(0, len(all_dids), 64):
                    chunk = all_dids[lo : lo + 64]
                    joints = [build_joint_input(None, data.doc_tokens[d],
                                                max_len=data.max_joint_len,
                                                empty_query=True)
                              for d in chunk]
                    cache = encoder_tokens(enc, pad_batch([j.ids for j in joints]))
                    _, pd = pool_forward(cache, enc.pooling, Segments.from_joint(joints))
                    for i, d in enumerate(chunk):
                        self._t_doc[d] = pd[i]
            # dual-pool scores for every fixed candidate pair
            self._t_scores = {}
            pairs = [(ex.query_id, did) for ex in data.examples for did in ex.doc_ids]
            flat_scores = np.empty(len(pairs))
            for lo in range(0, len(pairs), 64):
                chunk = pairs[lo : lo + 64]
                joints = [build_joint_input(data.query_tokens[q], data.doc_tokens[d],
                                            max_len=data.max_joint_len)
                          for q, d in chunk]
                cache = encoder_tokens(enc, pad_batch([j.ids for j in joints]))
                pq, pd = pool_forward(cache, enc.pooling, Segments.from_joint(joints))
                flat_scores[lo : lo + len(chunk)] = np.einsum("nk,nk->n", pq, pd)
            off = 0
            for ex in data.examples:
                L = len(ex.doc_ids)
                self._t_scores[ex.query_id] = flat_scores[off : off + L]
                off += L
            if aug_queries:
                self._aug = []
                for lo in range(0, len(aug_queries), 64):
                    chunk = aug_queries[lo : lo + 64]
                    joints = [build_joint_input(seq, data.doc_tokens[golden[src]],
                                                max_len=data.max_joint_len)
                              for src, seq in chunk]
                    cache = encoder_tokens(enc, pad_batch([j.ids for j in joints]))
                    pq, _ = pool_forward(cache, enc.pooling, Segments.from_joint(joints))
                    for i, (_, seq) in enumerate(chunk):
                        self._aug.append((pq[i], seq))
        if not aug_queries:
            self._aug = []
        self._aug_cursor = 0

    def _teacher_scores(self, ex: TrainingExample, doc_ids: Sequence[int]) -> np.ndarray:
        base = self._t_scores[ex.query_id]
        if len(doc_ids) == len(ex.doc_ids):
            return base
        # in-batch extension (DE teacher only): score extra docs directly
        tq = self._t_query[ex.query_id]
        extra = self._teacher_doc_embs(doc_ids[len(ex.doc_ids):]) @ tq
        return np.concatenate([base, extra])

    # -- student side ------------------------------------------------------

    def loss_and_grads(self, example_indices: Sequence[int]):
        """Forward/backward over one batch; no parameter update.

        Returns (components, grads) with grads matching the optimizer's
        parameter list.
        """
        data, w = self.data, self.weights
        batch = [data.examples[i] for i in example_indices]
        cands = _candidate_lists(batch, self.train_cfg.in_batch_negatives)
        n = len(batch)

        q_seqs = [data.query_tokens[ex.query_id] for ex in batch]
        q_emb, q_cache = encode_batch(self.q_enc, q_seqs)
        d_q_emb = np.zeros_like(q_emb)
        d_proj_w = np.zeros_like(self.proj.weight)
        d_proj_b = np.zeros_like(self.proj.bias)

        uniq_docs, rows_per_example = _unique_docs(cands)
        if self.cfg.mode == "symmetric":
            d_seqs = [data.doc_tokens[did] for did in uniq_docs]
            d_emb, d_cache = encode_batch(self.d_enc, d_seqs)
            d_d_emb = np.zeros_like(d_emb)
            doc_vecs = d_emb
        else:
            doc_vecs = self.doc_index.rows(uniq_docs)
            eff_q = project(self.proj, q_emb)
            d_eff_q = np.zeros_like(eff_q)

        components = {k: 0.0 for k in ("onehot", "score_distill", "embed_q",
                                       "embed_d", "aug_embed_q")}
        distill_fn = losses.SCORE_DISTILL_LOSSES[w.score_loss]

        for i, (ex, rows_i, (doc_ids, labels)) in enumerate(
                zip(batch, rows_per_example, cands)):
            rows = doc_vecs[rows_i]
            q_vec = q_emb[i] if self.cfg.mode == "symmetric" else eff_q[i]
            scores = rows @ q_vec
            d_scores = np.zeros(len(doc_ids))
            if w.onehot > 0:
                res = losses.softmax_ce_onehot(scores, labels)
                components["onehot"] += res.value / n
                d_scores += w.onehot * res.grad / n
            if w.score_distill > 0:
                t_scores = self._teacher_scores(ex, doc_ids)
                res = distill_fn(scores, t_scores,
                                 temperature=self.train_cfg.temperature)
                components["score_distill"] += res.value / n
                d_scores += w.score_distill * res.grad / n
            if d_scores.any():
                if self.cfg.mode == "symmetric":
                    d_q_emb[i] += d_scores @ rows
                    np.add.at(d_d_emb, rows_i, np.outer(d_scores, q_emb[i]))
                else:
                    d_eff_q[i] += d_scores @ rows

        if self.cfg.mode == "inherit_docs":
            # chain effective-query gradient through the projection
            d_q_emb += d_eff_q @ self.proj.weight
            d_proj_w += d_eff_q.T @ q_emb
            d_proj_b += d_eff_q.sum(axis=0)

        if w.embed_q > 0:
            t_q = np.stack([self._t_query[ex.query_id] for ex in batch])
            res = losses.embed_match_loss(t_q, q_emb, self.proj)
            components["embed_q"] = res.value
            d_q_emb += w.embed_q * res.grad_student
            d_proj_w += w.embed_q * res.grad_weight
            d_proj_b += w.embed_q * res.grad_bias

        if w.embed_d > 0:
            t_d = self._teacher_doc_embs(uniq_docs)
            res = losses.embed_match_loss(t_d, d_emb, self.proj)
            components["embed_d"] = res.value
            d_d_emb += w.embed_d * res.grad_student
            d_proj_w += w.embed_d * res.grad_weight
            d_proj_b += w.embed_d * res.grad_bias

        aug_grads = None
        if w.aug_embed_q > 0 and self._aug:
            take = min(len(batch), len(self._aug))
            sel = [(self._aug_cursor + j) % len(self._aug) for j in range(take)]
            self._aug_cursor = (self._aug_cursor + take) % len(self._aug)
            t_aug = np.stack([self._aug[s][0] for s in sel])
            a_seqs = [self._aug[s][1] for s in sel]
            a_emb, a_cache = encode_batch(self.q_enc, a_seqs)
            res = losses.embed_match_loss(t_aug, a_emb, self.proj)
            components["aug_embed_q"] = res.value
            d_proj_w += w.aug_embed_q * res.grad_weight
            d_proj_b += w.aug_embed_q * res.grad_bias
            aug_grads = encoder_backward_tokens(
                self.q_enc, a_cache,
                pool_backward(a_cache, self.q_enc.pooling,
                              w.aug_embed_q * res.grad_student))

        grads = encoder_backward_tokens(
            self.q_enc, q_cache, pool_backward(q_cache, self.q_enc.pooling, d_q_emb))
        if aug_grads is not None:
            grads = [a + b for a, b in zip(grads, aug_grads)]
        if self.cfg.mode == "symmetric":
            doc_grads = encoder_backward_tokens(
                self.d_enc, d_cache, pool_backward(d_cache, self.d_enc.pooling, d_d_emb))
            if self.d_enc is self.q_enc:
                grads = [a + b for a, b in zip(grads, doc_grads)]
            else:
                grads += doc_grads
        grads += [d_proj_w, d_proj_b]

        components["total"] = (
            w.onehot * components["onehot"]
            + w.score_distill * components["score_distill"]
            + w.embed_q * components["embed_q"]
            + w.embed_d * components["embed_d"]
            + w.aug_embed_q * components["aug_embed_q"]
        )
        return components, grads

    def distill_step(self, example_indices: Sequence[int], lr: float) -> Dict[str, float]:
        """One optimizer update; teacher and any inherited index stay frozen."""
        components, grads = self.loss_and_grads(example_indices)
        if not np.isfinite(components["total"]):
            raise TrainingDiverged(self.opt.t, "non-finite loss")
        try:
            self.opt.step(grads, lr)
        except FloatingPointError as exc:
            raise TrainingDiverged(self.opt.t, str(exc))
        return components

    def train(self) -> Tuple[StudentModel, TrainHistory]:
        cfg = self.train_cfg
        history = TrainHistory()
        for step, idxs in enumerate(_batch_order(len(self.data.examples),
                                                 cfg.batch_size, cfg.steps, cfg.seed)):
            lr = lr_at(step, cfg)
            components = self.distill_step(idxs, lr)
            history.append(step, lr, components)
        return self.student(), history

    def student(self) -> StudentModel:
        return StudentModel(
            mode=self.cfg.mode,
            query_encoder=self.q_enc,
            doc_encoder=self.d_enc,
            projection=self.proj,
            doc_index=self.doc_index,
        )


def train_student(
    teacher,
    student_cfg: StudentConfig,
    data: TokenizedData,
    weights: LossWeights,
    train_cfg: TrainConfig,
    doc_index: Optional[DocumentIndex] = None,
    aug_queries: Optional[Sequence[Tuple[int, np.ndarray]]] = None,
) -> Tuple[StudentModel, TrainHistory]:
    """Distill ``teacher`` into a fresh student; see Distiller."""
    distiller = Distiller(teacher, data, student_cfg, weights, train_cfg,
                          doc_index=doc_index, aug_queries=aug_queries)
    return distiller.train()


# ---------------------------------------------------------------------------
# Presets: the ablation rows every experiment sweeps over
# ---------------------------------------------------------------------------


@dataclass
class PresetSpec:
    mode: str
    weights: LossWeights
    use_aug: bool = False


PRESETS: Dict[str, PresetSpec] = {
    # train the student on labels alone
    "direct": PresetSpec("symmetric", LossWeights(onehot=1.0, score_distill=0.0)),
    # + score distillation from the teacher
    "score-distill": PresetSpec("symmetric", LossWeights(onehot=1.0, score_distill=1.0)),
    # + frozen document index inherited from the teacher
    "inherit-docs": PresetSpec("inherit_docs", LossWeights(onehot=1.0, score_distill=1.0)),
    # + query embedding matching
    "embed-match": PresetSpec(
        "inherit_docs", LossWeights(onehot=1.0, score_distill=1.0, embed_q=1.0)),
    # + embedding matching on generated queries
    "embed-match-querygen": PresetSpec(
        "inherit_docs",
        LossWeights(onehot=1.0, score_distill=1.0, embed_q=1.0, aug_embed_q=1.0),
        use_aug=True),
    # embedding matching alone (no labels, no score loss)
    "embed-only": PresetSpec(
        "inherit_docs", LossWeights(onehot=0.0, score_distill=0.0, embed_q=1.0)),
    "embed-only-querygen": PresetSpec(
        "inherit_docs",
        LossWeights(onehot=0.0, score_distill=0.0, embed_q=1.0, aug_embed_q=1.0),
        use_aug=True),
    # heavier matching weight for very small students trained with
    # generated queries
    "mini-querygen": PresetSpec(
        "inherit_docs",
        LossWeights(onehot=1.0, score_distill=1.0, embed_q=5.0, aug_embed_q=5.0),
        use_aug=True),
}


def preset(name: str) -> PresetSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
