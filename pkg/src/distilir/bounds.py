"""Numerical verification of the finite-sample generalization-gap theory.

Two of the inequalities are proven pointwise on the empirical sample,
so a verdict of False (beyond float slack) is a bug somewhere, not a
statistical fluke:

* lemma4: empirical distillation risk of the student minus empirical
  one-hot risk of the teacher is bounded by the two embedding-
  misalignment terms plus the teacher's label-error term.
* lemma5: empirical one-hot risk of the student minus its empirical
  distillation risk is bounded by the teacher's label-error term.

Both use the binary cross-entropy loss pair with single-document
examples.  The uniform-deviation term of the full gap bound takes a
supremum over encoder classes and has no finite-sample surrogate; it
is reported as not computable, with the realized student understood as
a lower bound on that supremum.

When student and teacher embedding widths differ, the lemma checks run
on the projected student embeddings and say so in the report; that
keeps the inequalities well-formed (they hold for any same-dimension
encoder pair, including the projected one) at the price of describing
a slightly different student.  The alignment terms of the full bound
always include the projection, exactly as the matching loss that
minimizes them does.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .datasim import TrainingExample
from .distill import StudentModel, TokenizedData
from .encoders import DEModel, Projection, encode_batch, project
from .numerics import FLOAT, sigmoid, softplus

SLACK = 1e-9


@dataclass
class BoundSample:
    """Flattened (query, document, binary label) triples (L = 1).

    ``doc_ids`` lets inherit-mode students (whose document embeddings
    live in a frozen index) participate in the checks.
    """

    queries: List[np.ndarray]
    docs: List[np.ndarray]
    labels: np.ndarray
    doc_ids: Optional[List[int]] = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=FLOAT)
        if not (len(self.queries) == len(self.docs) == self.labels.shape[0]):
            raise ValueError("queries/docs/labels length mismatch")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be binary")

    @property
    def n(self) -> int:
        return len(self.queries)


def sample_from_examples(data: TokenizedData,
                         examples: Optional[Sequence[TrainingExample]] = None) -> BoundSample:
    """Build a bound sample from single-document training examples."""
    examples = data.examples if examples is None else examples
    queries, docs, labels, doc_ids = [], [], [], []
    for ex in examples:
        if len(ex.doc_ids) != 1:
            raise ValueError("lemma requires single-document examples")
        queries.append(data.query_tokens[ex.query_id])
        docs.append(data.doc_tokens[ex.doc_ids[0]])
        doc_ids.append(ex.doc_ids[0])
        labels.append(ex.labels[0])
    return BoundSample(queries, docs, np.asarray(labels, dtype=FLOAT), doc_ids)


@dataclass
class BoundReport:
    check: str
    n: int
    K: float
    lhs: Optional[float]
    rhs: Optional[float]
    term_emb_q: float
    term_emb_d: float
    term_label: float
    delta_teacher_estimate: Optional[float]
    verdict: Optional[bool]
    projected_student: bool
    slack: float
    uniform_deviation: str = "not computable (supremum over encoder classes)"

    def to_json_obj(self) -> dict:
        obj = asdict(self)
        for key, val in obj.items():
            if isinstance(val, (np.floating, np.integer)):
                obj[key] = float(val)
        return obj


def write_report_json(report: BoundReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_json_obj(), fh, sort_keys=True, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Embedding plumbing
# ---------------------------------------------------------------------------


def _teacher_embeddings(teacher: DEModel, sample: BoundSample):
    Fq, _ = encode_batch(teacher.query_encoder, sample.queries)
    Gd, _ = encode_batch(teacher.doc_encoder, sample.docs)
    return Fq, Gd


def _student_raw(student, sample: BoundSample):
    """Unprojected student (query, doc) embeddings.

    Inherit-mode students serve documents from their frozen index, so
    the doc side is already in teacher space.
    """
    if isinstance(student, DEModel):
        q, _ = encode_batch(student.query_encoder, sample.queries)
        d, _ = encode_batch(student.doc_encoder, sample.docs)
        return q, d
    if isinstance(student, StudentModel):
        q = student.raw_query_embeddings(sample.queries)
        if student.mode == "inherit_docs":
            if sample.doc_ids is None:
                raise ValueError("inherit-mode student requires doc_ids in the sample")
            d = student.doc_index.rows(sample.doc_ids)
        else:
            d, _ = encode_batch(student.doc_encoder, sample.docs)
        return q, d
    raise TypeError(f"cannot embed a {type(student).__name__}")


def _resolve_projection(student, projection: Optional[Projection]) -> Optional[Projection]:
    if projection is not None:
        return projection
    if isinstance(student, StudentModel):
        return student.projection
    return None


def _student_embeddings_for_lemma(student, sample: BoundSample,
                                  teacher_dim: int,
                                  projection: Optional[Projection]):
    """Project a side only when its width differs from the teacher's."""
    q, d = _student_raw(student, sample)
    proj = _resolve_projection(student, projection)
    projected = False
    if q.shape[1] != teacher_dim:
        if proj is None:
            raise ValueError("dimension mismatch and no projection supplied")
        q = project(proj, q)
        projected = True
    if d.shape[1] != teacher_dim:
        if proj is None:
            raise ValueError("dimension mismatch and no projection supplied")
        d = project(proj, d)
        projected = True
    return q, d, projected


def _student_embeddings_for_alignment(student, sample: BoundSample,
                                      teacher_dim: int,
                                      projection: Optional[Projection]):
    """Alignment terms include the projection whenever one exists;
    inherited document embeddings stay as served (teacher space)."""
    q, d = _student_raw(student, sample)
    proj = _resolve_projection(student, projection)
    if proj is not None:
        q = project(proj, q)
        if d.shape[1] != teacher_dim:
            d = project(proj, d)
    if q.shape[1] != teacher_dim or d.shape[1] != teacher_dim:
        raise ValueError("dimension mismatch and no projection supplied")
    return q, d, proj is not None


def _max_norm(*arrays: np.ndarray) -> float:
    return float(max(np.linalg.norm(a, axis=1).max() for a in arrays))


def _binary_onehot_risk(scores: np.ndarray, y: np.ndarray) -> float:
    return float((y * softplus(-scores) + (1 - y) * softplus(scores)).mean())


def _binary_distill_risk(s_student: np.ndarray, s_teacher: np.ndarray) -> float:
    t = sigmoid(s_teacher)
    return float((t * softplus(-s_student) + (1 - t) * softplus(s_student)).mean())


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def compute_K(student, teacher: DEModel, sample: BoundSample,
              projection: Optional[Projection] = None) -> float:
    """Empirical norm bound: max embedding norm over all four encoders."""
    Fq, Gd = _teacher_embeddings(teacher, sample)
    fq, gd, _ = _student_embeddings_for_lemma(student, sample, Fq.shape[1], projection)
    return _max_norm(Fq, Gd, fq, gd)


def _lemma_terms(teacher: DEModel, student, sample: BoundSample,
                 projection: Optional[Projection]):
    Fq, Gd = _teacher_embeddings(teacher, sample)
    fq, gd, projected = _student_embeddings_for_lemma(student, sample,
                                                      Fq.shape[1], projection)
    K = _max_norm(Fq, Gd, fq, gd)
    st = np.einsum("nk,nk->n", Fq, Gd)
    ss = np.einsum("nk,nk->n", fq, gd)
    term_emb_q = 2.0 * K * np.linalg.norm(fq - Fq, axis=1).mean()
    term_emb_d = 2.0 * K * np.linalg.norm(gd - Gd, axis=1).mean()
    term_label = K * K * np.abs(sigmoid(st) - sample.labels).mean()
    return st, ss, K, float(term_emb_q), float(term_emb_d), float(term_label), projected


def lemma4_check(teacher: DEModel, student, sample: BoundSample,
                 projection: Optional[Projection] = None,
                 slack: float = SLACK) -> BoundReport:
    """Student distillation risk vs teacher one-hot risk (must hold)."""
    st, ss, K, term_emb_q, term_emb_d, term_label, projected = _lemma_terms(
        teacher, student, sample, projection)
    lhs = _binary_distill_risk(ss, st) - _binary_onehot_risk(st, sample.labels)
    rhs = term_emb_q + term_emb_d + term_label
    return BoundReport(
        check="lemma4", n=sample.n, K=K, lhs=lhs, rhs=rhs,
        term_emb_q=term_emb_q, term_emb_d=term_emb_d, term_label=term_label,
        delta_teacher_estimate=None, verdict=bool(lhs <= rhs + slack),
        projected_student=projected, slack=slack,
    )


def lemma5_check(teacher: DEModel, student, sample: BoundSample,
                 projection: Optional[Projection] = None,
                 slack: float = SLACK) -> BoundReport:
    """Student one-hot risk vs its own distillation risk (must hold)."""
    st, ss, K, term_emb_q, term_emb_d, term_label, projected = _lemma_terms(
        teacher, student, sample, projection)
    lhs = _binary_onehot_risk(ss, sample.labels) - _binary_distill_risk(ss, st)
    return BoundReport(
        check="lemma5", n=sample.n, K=K, lhs=lhs, rhs=term_label,
        term_emb_q=term_emb_q, term_emb_d=term_emb_d, term_label=term_label,
        delta_teacher_estimate=None, verdict=bool(lhs <= term_label + slack),
        projected_student=projected, slack=slack,
    )


def embed_alignment(teacher: DEModel, student, sample: BoundSample,
                    projection: Optional[Projection] = None) -> Tuple[float, float]:
    """(query, document) mean matching distances, projection included."""
    Fq, Gd = _teacher_embeddings(teacher, sample)
    fq, gd, _ = _student_embeddings_for_alignment(student, sample,
                                                  Fq.shape[1], projection)
    return (
        float(np.linalg.norm(Fq - fq, axis=1).mean()),
        float(np.linalg.norm(Gd - gd, axis=1).mean()),
    )


def theorem1_terms(teacher: DEModel, student, train_sample: BoundSample,
                   heldout_sample: BoundSample,
                   projection: Optional[Projection] = None) -> BoundReport:
    """Every computable term of the teacher-student gap bound.

    The teacher's empirical-vs-population risk deviation is estimated
    with the held-out split; the uniform-deviation term is reported as
    not computable.  No verdict: the full bound is not assertable
    without that term.
    """
    Fq, Gd = _teacher_embeddings(teacher, train_sample)
    fq, gd, projected = _student_embeddings_for_alignment(
        student, train_sample, Fq.shape[1], projection)
    K = _max_norm(Fq, Gd, fq, gd)
    r_emb_q = float(np.linalg.norm(Fq - fq, axis=1).mean())
    r_emb_d = float(np.linalg.norm(Gd - gd, axis=1).mean())

    st_train = np.einsum("nk,nk->n", Fq, Gd)
    Fq_h, Gd_h = _teacher_embeddings(teacher, heldout_sample)
    st_held = np.einsum("nk,nk->n", Fq_h, Gd_h)
    risk_train = _binary_onehot_risk(st_train, train_sample.labels)
    risk_held = _binary_onehot_risk(st_held, heldout_sample.labels)
    term_label = K * K * np.abs(sigmoid(st_train) - train_sample.labels).mean()

    return BoundReport(
        check="theorem1", n=train_sample.n, K=K, lhs=None, rhs=None,
        term_emb_q=2.0 * K * r_emb_q, term_emb_d=2.0 * K * r_emb_d,
        term_label=float(term_label),
        delta_teacher_estimate=abs(risk_train - risk_held),
        verdict=None, projected_student=projected, slack=SLACK,
    )


def pairwise_discrepancy(teacher_q_embs: np.ndarray,
                         student_q_embs: np.ndarray) -> np.ndarray:
    """||t_q - t_q'|| - ||s_q - s_q'|| over all unordered query pairs."""
    t = np.asarray(teacher_q_embs, dtype=FLOAT)
    s = np.asarray(student_q_embs, dtype=FLOAT)
    if t.ndim != 2 or s.ndim != 2 or t.shape[0] != s.shape[0]:
        raise ValueError("embedding count mismatch")
    if t.shape[0] < 2:
        raise ValueError("need at least two queries")
    iu = np.triu_indices(t.shape[0], k=1)
    t_dist = np.linalg.norm(t[iu[0]] - t[iu[1]], axis=1)
    s_dist = np.linalg.norm(s[iu[0]] - s[iu[1]], axis=1)
    return t_dist - s_dist


def write_discrepancy_csv(values: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("discrepancy\n")
        for v in values:
            fh.write(f"{float(v)!r}\n")
