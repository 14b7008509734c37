"""Document index construction, exact inner-product search, re-ranking,
and the retrieval metric suite.

Search is exact (full scoring + sort): at desk scale correctness wins
and the brute-force oracle for top_k stays trivial.  Ties are broken by
ascending doc id everywhere so every metric value is deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Set

import numpy as np

from .encoders import (
    CEModel,
    EncoderParams,
    Segments,
    build_joint_input,
    checkpoint_bytes,
    encoder_tokens,
    pad_batch,
    pool_forward,
)
from .numerics import FLOAT


@dataclass
class DocumentIndex:
    """Dense doc-embedding matrix; row i belongs to doc_ids[i]."""

    doc_ids: np.ndarray  # (N,) int64
    matrix: np.ndarray  # (N, k) float64
    encoder_hash: str = ""
    pooling: str = ""
    empty_query: bool = False

    def __post_init__(self):
        self.doc_ids = np.asarray(self.doc_ids, dtype=np.int64)
        self.matrix = np.asarray(self.matrix, dtype=FLOAT)
        if self.matrix.ndim != 2 or self.doc_ids.shape[0] != self.matrix.shape[0]:
            raise ValueError("doc id table / matrix row mismatch")
        self._row_of = {int(d): i for i, d in enumerate(self.doc_ids)}

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row(self, doc_id: int) -> np.ndarray:
        try:
            return self.matrix[self._row_of[int(doc_id)]]
        except KeyError:
            raise KeyError(f"unknown doc id {doc_id}")

    def rows(self, doc_ids: Sequence[int]) -> np.ndarray:
        return np.stack([self.row(d) for d in doc_ids])


@dataclass
class RankedList:
    """Scores non-increasing; exact ties ordered by ascending doc id."""

    query_id: int
    doc_ids: np.ndarray
    scores: np.ndarray


@dataclass
class Judgments:
    golden: Dict[int, Set[int]]
    answers: Dict[int, List[str]] = field(default_factory=dict)


def _ranked(query_id: int, doc_ids: np.ndarray, scores: np.ndarray, k: int) -> RankedList:
    order = np.lexsort((doc_ids, -scores))[:k]
    return RankedList(query_id, doc_ids[order].copy(), scores[order].copy())


# ---------------------------------------------------------------------------
# Index construction and search
# ---------------------------------------------------------------------------


def build_index(
    encoder,
    documents: Sequence,
    tokenizer,
    batch_size: int = 64,
    max_len: int = 0,
    empty_query: bool = False,
) -> DocumentIndex:
    """Embed every document with a doc encoder or a dual-pooled CE.

    ``tokenizer`` maps document text to a token id array.  For a
    dual-pooled cross encoder the document embedding is the document
    proxy of the joint input built with an empty query.
    """
    doc_ids = np.asarray([d.doc_id for d in documents], dtype=np.int64)
    rows: List[np.ndarray] = []
    for lo in range(0, len(documents), batch_size):
        chunk = documents[lo : lo + batch_size]
        try:
            if isinstance(encoder, CEModel):
                if not encoder.is_dual:
                    raise ValueError("index construction needs a dual-pooled CE")
                joints = [
                    build_joint_input(None, tokenizer(d.text), max_len=max_len, empty_query=True)
                    for d in chunk
                ]
                cache = encoder_tokens(encoder.encoder, pad_batch([j.ids for j in joints]))
                _, proxy_d = pool_forward(
                    cache, encoder.encoder.pooling, Segments.from_joint(joints)
                )
                rows.append(proxy_d)
            elif isinstance(encoder, EncoderParams):
                cache = encoder_tokens(encoder, pad_batch([tokenizer(d.text) for d in chunk]))
                rows.append(pool_forward(cache, encoder.pooling))
            else:
                raise TypeError(f"cannot build an index from {type(encoder).__name__}")
        except ValueError as exc:
            raise ValueError(f"encoding failed at doc id {chunk[0].doc_id}: {exc}") from exc
    matrix = np.concatenate(rows, axis=0)
    pooling = encoder.pooling if isinstance(encoder, EncoderParams) else encoder.encoder.pooling
    return DocumentIndex(
        doc_ids=doc_ids,
        matrix=matrix,
        encoder_hash=hashlib.sha256(checkpoint_bytes(encoder)).hexdigest(),
        pooling=pooling.value,
        empty_query=empty_query or isinstance(encoder, CEModel),
    )


def top_k(index: DocumentIndex, q_emb: np.ndarray, k: int, query_id: int = -1) -> RankedList:
    """The k largest inner products (all of them when k > N)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q_emb = np.asarray(q_emb, dtype=FLOAT)
    if q_emb.shape != (index.dim,):
        raise ValueError(f"dimension mismatch: {q_emb.shape} vs ({index.dim},)")
    scores = index.matrix @ q_emb
    return _ranked(query_id, index.doc_ids, scores, min(k, index.size))


def rerank(candidates: Sequence[int], scorer, query, query_id: int = -1) -> RankedList:
    """Reorder a candidate list with ``scorer.scores(query, candidates)``.

    The output contains exactly the input candidates; order of the
    input list is irrelevant.
    """
    doc_ids = np.asarray(sorted(int(c) for c in candidates), dtype=np.int64)
    if doc_ids.size == 0:
        raise ValueError("empty candidate list")
    scores = np.asarray(scorer.scores(query, doc_ids), dtype=FLOAT)
    return _ranked(query_id, doc_ids, scores, doc_ids.size)


class IndexScorer:
    """DE-style scorer over a fixed index; query is an embedding."""

    def __init__(self, index: DocumentIndex):
        self.index = index

    def scores(self, q_emb: np.ndarray, doc_ids: Sequence[int]) -> np.ndarray:
        return self.index.rows(doc_ids) @ np.asarray(q_emb, dtype=FLOAT)


class CEScorer:
    """Cross-encoder scorer; query is a token sequence."""

    def __init__(self, ce: CEModel, doc_tokens: Dict[int, np.ndarray], max_len: int = 0):
        self.ce = ce
        self.doc_tokens = doc_tokens
        self.max_len = max_len

    def scores(self, q_tokens: np.ndarray, doc_ids: Sequence[int]) -> np.ndarray:
        try:
            joints = [
                build_joint_input(q_tokens, self.doc_tokens[int(d)], max_len=self.max_len)
                for d in doc_ids
            ]
        except KeyError as exc:
            raise KeyError(f"unknown doc id {exc.args[0]}")
        cache = encoder_tokens(self.ce.encoder, pad_batch([j.ids for j in joints]))
        if self.ce.is_dual:
            pq, pd = pool_forward(
                cache, self.ce.encoder.pooling, Segments.from_joint(joints)
            )
            return np.einsum("nk,nk->n", pq, pd)
        pooled = pool_forward(cache, self.ce.encoder.pooling)
        return pooled @ self.ce.w


# ---------------------------------------------------------------------------
# Metrics (values reported as fractions; MRR/nDCG scaled by 100)
# ---------------------------------------------------------------------------


def _check_judged(rankings: Iterable[RankedList], judgments: Judgments):
    ranked = list(rankings)
    for r in ranked:
        if r.query_id not in judgments.golden:
            raise KeyError(f"missing judgment for query {r.query_id}")
    if not ranked:
        raise ValueError("no rankings")
    return ranked


def recall_at_k(rankings: Iterable[RankedList], judgments: Judgments, k: int) -> float:
    """Fraction of queries whose golden document appears in the top k."""
    ranked = _check_judged(rankings, judgments)
    hits = 0
    for r in ranked:
        golden = judgments.golden[r.query_id]
        hits += any(int(d) in golden for d in r.doc_ids[:k])
    return hits / len(ranked)


def relaxed_recall_at_k(
    rankings: Iterable[RankedList],
    judgments: Judgments,
    doc_texts: Dict[int, str],
    k: int,
) -> float:
    """Fraction of queries whose answer string occurs in a top-k document."""
    ranked = _check_judged(rankings, judgments)
    hits = 0
    for r in ranked:
        if r.query_id not in judgments.answers:
            raise KeyError(f"missing answers for query {r.query_id}")
        answers = judgments.answers[r.query_id]
        found = False
        for d in r.doc_ids[:k]:
            text = doc_texts[int(d)]
            if any(a in text for a in answers):
                found = True
                break
        hits += found
    return hits / len(ranked)


def mrr_at_10(rankings: Iterable[RankedList], judgments: Judgments) -> float:
    """100 x mean reciprocal rank of the first golden doc within top 10."""
    ranked = _check_judged(rankings, judgments)
    total = 0.0
    for r in ranked:
        golden = judgments.golden[r.query_id]
        for rank, d in enumerate(r.doc_ids[:10], start=1):
            if int(d) in golden:
                total += 1.0 / rank
                break
    return 100.0 * total / len(ranked)


def ndcg_at_10(rankings: Iterable[RankedList], judgments: Judgments) -> float:
    """100 x nDCG@10 with binary gains and log2(rank+1) discounts."""
    ranked = _check_judged(rankings, judgments)
    total = 0.0
    for r in ranked:
        golden = judgments.golden[r.query_id]
        if not golden:
            raise ValueError(f"query {r.query_id} has no golden documents")
        dcg = 0.0
        for rank, d in enumerate(r.doc_ids[:10], start=1):
            if int(d) in golden:
                dcg += 1.0 / np.log2(rank + 1)
        ideal = sum(1.0 / np.log2(i + 1) for i in range(1, min(len(golden), 10) + 1))
        total += dcg / ideal
    return 100.0 * total / len(ranked)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

INDEX_FORMAT_VERSION = 1


def save_index(index: DocumentIndex, path) -> None:
    """Header JSON line, then one JSON row of decimals per document."""
    header = {
        "version": INDEX_FORMAT_VERSION,
        "k": index.dim,
        "n": index.size,
        "encoder_hash": index.encoder_hash,
        "pooling": index.pooling,
        "empty_query": index.empty_query,
        "doc_ids": index.doc_ids.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in index.matrix:
            fh.write(json.dumps(row.tolist()) + "\n")


def load_index(path) -> DocumentIndex:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("version") != INDEX_FORMAT_VERSION:
            raise ValueError(f"unsupported index version {header.get('version')!r}")
        rows = [json.loads(line) for line in fh if line.strip()]
    if len(rows) != header["n"]:
        raise ValueError(f"index row count {len(rows)} != header n {header['n']}")
    return DocumentIndex(
        doc_ids=np.asarray(header["doc_ids"], dtype=np.int64),
        matrix=np.asarray(rows, dtype=FLOAT),
        encoder_hash=header["encoder_hash"],
        pooling=header["pooling"],
        empty_query=header["empty_query"],
    )


def write_rankings_tsv(rankings: Sequence[RankedList], path) -> None:
    """TSV: query_id, doc_id, rank, score (shortest round-trip decimals)."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in rankings:
            for rank, (d, s) in enumerate(zip(r.doc_ids, r.scores), start=1):
                fh.write(f"{r.query_id}\t{int(d)}\t{rank}\t{float(s)!r}\n")


def read_rankings_tsv(path) -> List[RankedList]:
    by_query: Dict[int, List] = {}
    order: List[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields")
            qid, did, rank, score = int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])
            if qid not in by_query:
                by_query[qid] = []
                order.append(qid)
            by_query[qid].append((rank, did, score))
    rankings = []
    for qid in order:
        entries = sorted(by_query[qid])
        rankings.append(
            RankedList(
                qid,
                np.asarray([d for _, d, _ in entries], dtype=np.int64),
                np.asarray([s for _, _, s in entries], dtype=FLOAT),
            )
        )
    return rankings


def write_answers_jsonl(answers: Dict[int, List[str]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(answers):
            fh.write(json.dumps({"query_id": qid, "answers": answers[qid]}) + "\n")


def read_answers_jsonl(path) -> Dict[int, List[str]]:
    out: Dict[int, List[str]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            obj = json.loads(line)
            out[int(obj["query_id"])] = [str(a) for a in obj["answers"]]
    return out
