"""Synthetic retrieval corpora with controllable topical structure, and
the documented JSONL/TSV interchange formats.

Every topic owns a unique answer keyword and a pool of high-probability
topic tokens layered over a shared low-probability background pool.
Queries are drawn mostly from their golden document's realized tokens
(plus topic-level noise), so the golden document is identifiable but
not trivially so: retrieval models get a learnable, imperfect signal.

Documents always contain their topic's answer keyword, which makes
relaxed recall >= strict recall provable on generated data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set

import numpy as np

from .numerics import derive_seed, make_rng

KEYWORD_PROB = 0.08
TOPIC_POOL_PROB = 0.70
BACKGROUND_PROB = 1.0 - KEYWORD_PROB - TOPIC_POOL_PROB
QUERY_FROM_DOC_PROB = 0.75  # remaining mass drawn from the topic distribution
RESERVED_COUNT = 5


class DataFormatError(ValueError):
    """A dataset file violated the documented format; message carries
    file and line."""


@dataclass
class Document:
    doc_id: int
    text: str
    topic: int = -1


@dataclass
class Query:
    query_id: int
    text: str
    answers: List[str]
    topic: int = -1
    golden_doc_id: int = -1


@dataclass
class TrainingExample:
    query_id: int
    doc_ids: List[int]
    labels: List[int]


@dataclass
class TopicModel:
    """Per-topic unigram distributions over a shared word list."""

    num_topics: int
    words: List[str]  # all non-reserved tokens, keywords first
    keywords: List[str]  # one unique answer keyword per topic
    probs: np.ndarray  # (T, W) rows summing to 1

    def sample_tokens(self, topic: int, n: int, rng: np.random.Generator) -> List[str]:
        idx = rng.choice(len(self.words), size=n, p=self.probs[topic])
        return [self.words[i] for i in idx]


@dataclass
class SyntheticCorpus:
    num_topics: int
    documents: List[Document]
    queries: List[Query]
    qrels: Dict[int, Set[int]]  # query_id -> golden doc ids

    def doc_by_id(self) -> Dict[int, Document]:
        return {d.doc_id: d for d in self.documents}


def build_topic_model(num_topics: int, vocab_size: int) -> TopicModel:
    """Deterministic topic/background token layout for a vocabulary size.

    ``vocab_size`` counts the 5 reserved ids; the remaining words are
    split into T keywords, per-topic pools, and a shared background.
    """
    n_words = vocab_size - RESERVED_COUNT
    if n_words < num_topics * 3 + num_topics:
        raise ValueError(
            f"vocab_size {vocab_size} too small for {num_topics} topics"
        )
    keywords = [f"answer{t}" for t in range(num_topics)]
    n_rest = n_words - num_topics
    n_background = max(n_rest // 4, 1)
    n_topic_words = n_rest - n_background
    per_topic = n_topic_words // num_topics
    if per_topic < 2:
        raise ValueError("not enough vocabulary for per-topic word pools")
    topic_words = [f"w{t}x{i}" for t in range(num_topics) for i in range(per_topic)]
    used = num_topics + per_topic * num_topics
    background = [f"bg{i}" for i in range(n_words - used)]
    words = keywords + topic_words + background

    probs = np.zeros((num_topics, len(words)))
    bg_lo = num_topics + per_topic * num_topics
    for t in range(num_topics):
        probs[t, t] = KEYWORD_PROB
        lo = num_topics + t * per_topic
        probs[t, lo : lo + per_topic] = TOPIC_POOL_PROB / per_topic
        probs[t, bg_lo:] = BACKGROUND_PROB / max(len(background), 1)
        probs[t] /= probs[t].sum()
    return TopicModel(num_topics, words, keywords, probs)


def generate_corpus(
    num_topics: int,
    docs_per_topic: int,
    queries_per_topic: int,
    vocab_size: int,
    doc_len: int,
    query_len: int,
    seed: int,
) -> SyntheticCorpus:
    """Deterministic synthetic corpus; same seed, same bytes."""
    if min(num_topics, docs_per_topic, queries_per_topic, doc_len, query_len) < 1:
        raise ValueError("all corpus sizes must be >= 1")
    model = build_topic_model(num_topics, vocab_size)
    rng = make_rng(derive_seed(seed, "datasim"))

    documents: List[Document] = []
    for t in range(num_topics):
        for _ in range(docs_per_topic):
            tokens = model.sample_tokens(t, doc_len, rng)
            if model.keywords[t] not in tokens:
                tokens[int(rng.integers(doc_len))] = model.keywords[t]
            documents.append(Document(len(documents), " ".join(tokens), t))

    queries: List[Query] = []
    qrels: Dict[int, Set[int]] = {}
    for t in range(num_topics):
        topic_docs = documents[t * docs_per_topic : (t + 1) * docs_per_topic]
        for _ in range(queries_per_topic):
            golden = topic_docs[int(rng.integers(docs_per_topic))]
            doc_tokens = golden.text.split()
            tokens = []
            for _ in range(query_len):
                if rng.random() < QUERY_FROM_DOC_PROB:
                    tokens.append(doc_tokens[int(rng.integers(len(doc_tokens)))])
                else:
                    tokens.append(model.sample_tokens(t, 1, rng)[0])
            qid = len(queries)
            queries.append(
                Query(qid, " ".join(tokens), [model.keywords[t]], t, golden.doc_id)
            )
            qrels[qid] = {golden.doc_id}

    return SyntheticCorpus(num_topics, documents, queries, qrels)


def make_training_examples(
    corpus: SyntheticCorpus,
    num_candidates: int,
    negatives: str = "random",
    seed: int = 0,
    queries: Optional[Sequence[Query]] = None,
) -> List[TrainingExample]:
    """Candidate lists with exactly one positive (the golden document).

    ``num_candidates == 1`` emits alternating single-document positive
    and negative examples (the shape the bound checks consume).
    """
    if num_candidates < 1:
        raise ValueError("candidate count must be >= 1")
    if num_candidates > len(corpus.documents):
        raise ValueError("candidate count exceeds corpus size")
    if negatives not in ("random", "in-topic-excluded"):
        raise ValueError(f"unknown negatives mode {negatives!r}")
    rng = make_rng(derive_seed(seed, "examples"))
    use = list(corpus.queries) if queries is None else list(queries)

    def negative_pool(q: Query) -> List[int]:
        if negatives == "in-topic-excluded":
            pool = [d.doc_id for d in corpus.documents if d.topic != q.topic]
        else:
            pool = [d.doc_id for d in corpus.documents if d.doc_id != q.golden_doc_id]
        if not pool:
            raise ValueError("no negatives available")
        return pool

    examples: List[TrainingExample] = []
    for i, q in enumerate(use):
        pool = negative_pool(q)
        if num_candidates == 1:
            if i % 2 == 0:
                examples.append(TrainingExample(q.query_id, [q.golden_doc_id], [1]))
            else:
                neg = pool[int(rng.integers(len(pool)))]
                examples.append(TrainingExample(q.query_id, [neg], [0]))
            continue
        negs = rng.choice(pool, size=num_candidates - 1, replace=False)
        doc_ids = [q.golden_doc_id] + [int(d) for d in negs]
        labels = [1] + [0] * (num_candidates - 1)
        order = rng.permutation(num_candidates)
        examples.append(
            TrainingExample(
                q.query_id,
                [doc_ids[j] for j in order],
                [labels[j] for j in order],
            )
        )
    return examples


# ---------------------------------------------------------------------------
# Interchange formats (JSONL / TSV, UTF-8, one record per line)
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """What the documented on-disk format carries (no topic labels)."""

    documents: List[Document]
    queries: List[Query]
    qrels: Dict[int, Set[int]]
    examples: List[TrainingExample] = field(default_factory=list)


def _parse_jsonl(path: Path, required: Sequence[str]):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})")
            for key in required:
                if key not in obj:
                    raise DataFormatError(f"{path}:{lineno}: missing field {key!r}")
            records.append((lineno, obj))
    return records


def write_corpus_jsonl(documents: Sequence[Document], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in documents:
            fh.write(json.dumps({"doc_id": d.doc_id, "text": d.text}) + "\n")


def read_corpus_jsonl(path) -> List[Document]:
    docs = []
    for lineno, obj in _parse_jsonl(Path(path), ("doc_id", "text")):
        if not isinstance(obj["doc_id"], int):
            raise DataFormatError(f"{path}:{lineno}: doc_id must be an integer")
        docs.append(Document(obj["doc_id"], str(obj["text"])))
    return docs


def write_queries_jsonl(queries: Sequence[Query], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(
                json.dumps(
                    {"query_id": q.query_id, "text": q.text, "answers": q.answers}
                )
                + "\n"
            )


def read_queries_jsonl(path) -> List[Query]:
    queries = []
    for lineno, obj in _parse_jsonl(Path(path), ("query_id", "text", "answers")):
        if not isinstance(obj["query_id"], int):
            raise DataFormatError(f"{path}:{lineno}: query_id must be an integer")
        if not isinstance(obj["answers"], list):
            raise DataFormatError(f"{path}:{lineno}: answers must be a list")
        queries.append(
            Query(obj["query_id"], str(obj["text"]), [str(a) for a in obj["answers"]])
        )
    return queries


def write_qrels_tsv(qrels: Dict[int, Set[int]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for did in sorted(qrels[qid]):
                fh.write(f"{qid}\t{did}\n")


def read_qrels_tsv(path) -> Dict[int, Set[int]]:
    qrels: Dict[int, Set[int]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 2 tab-separated fields")
            try:
                qid, did = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: ids must be integers")
            qrels.setdefault(qid, set()).add(did)
    return qrels


def write_examples_jsonl(examples: Sequence[TrainingExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {"query_id": ex.query_id, "doc_ids": ex.doc_ids, "labels": ex.labels}
                )
                + "\n"
            )


def read_examples_jsonl(path) -> List[TrainingExample]:
    examples = []
    for lineno, obj in _parse_jsonl(Path(path), ("query_id", "doc_ids", "labels")):
        doc_ids, labels = obj["doc_ids"], obj["labels"]
        if len(doc_ids) != len(labels):
            raise DataFormatError(f"{path}:{lineno}: doc_ids/labels length mismatch")
        if not all(l in (0, 1) for l in labels):
            raise DataFormatError(f"{path}:{lineno}: labels must be 0/1")
        examples.append(TrainingExample(obj["query_id"], list(doc_ids), list(labels)))
    return examples


CORPUS_FILE = "corpus.jsonl"
QUERIES_FILE = "queries.jsonl"
QRELS_FILE = "qrels.tsv"
EXAMPLES_FILE = "examples.jsonl"


def save_dataset(dataset: Dataset, directory) -> List[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_corpus_jsonl(dataset.documents, directory / CORPUS_FILE)
    write_queries_jsonl(dataset.queries, directory / QUERIES_FILE)
    write_qrels_tsv(dataset.qrels, directory / QRELS_FILE)
    write_examples_jsonl(dataset.examples, directory / EXAMPLES_FILE)
    return [directory / f for f in (CORPUS_FILE, QUERIES_FILE, QRELS_FILE, EXAMPLES_FILE)]


def load_dataset(directory) -> Dataset:
    """Load and cross-validate the four dataset files in a directory."""
    directory = Path(directory)
    documents = read_corpus_jsonl(directory / CORPUS_FILE)
    queries = read_queries_jsonl(directory / QUERIES_FILE)
    qrels = read_qrels_tsv(directory / QRELS_FILE)
    examples = read_examples_jsonl(directory / EXAMPLES_FILE)

    doc_ids = {d.doc_id for d in documents}
    query_ids = {q.query_id for q in queries}
    for qid, golden in qrels.items():
        if qid not in query_ids:
            raise DataFormatError(f"qrels reference unknown query_id {qid}")
        for did in golden:
            if did not in doc_ids:
                raise DataFormatError(f"qrels reference unknown doc_id {did}")
    for ex in examples:
        if ex.query_id not in query_ids:
            raise DataFormatError(f"examples reference unknown query_id {ex.query_id}")
        for did in ex.doc_ids:
            if did not in doc_ids:
                raise DataFormatError(f"examples reference unknown doc_id {did}")
    for q in queries:
        golden = qrels.get(q.query_id, set())
        if golden:
            q.golden_doc_id = min(golden)
    return Dataset(documents, queries, qrels, examples)


def corpus_to_dataset(corpus: SyntheticCorpus, examples: Sequence[TrainingExample]) -> Dataset:
    return Dataset(
        documents=list(corpus.documents),
        queries=list(corpus.queries),
        qrels=dict(corpus.qrels),
        examples=list(examples),
    )
