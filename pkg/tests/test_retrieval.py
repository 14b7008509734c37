import math

import numpy as np
import pytest

from distilir import datasim, retrieval as R
from distilir import encoders as E
from distilir.numerics import make_rng


def toy_index(scores_matrix):
    m = np.asarray(scores_matrix, dtype=float)
    return R.DocumentIndex(np.arange(m.shape[0]), m)


def ranked(query_id, doc_ids, scores=None):
    doc_ids = np.asarray(doc_ids)
    if scores is None:
        scores = -np.arange(len(doc_ids), dtype=float)
    return R.RankedList(query_id, doc_ids, np.asarray(scores, dtype=float))


class TestTopK:
    def test_hand_order(self):
        index = toy_index([[2.0], [1.0], [3.0]])
        out = R.top_k(index, np.array([1.0]), 2)
        assert out.doc_ids.tolist() == [2, 0]

    def test_equal_scores_ascending_doc_id(self):
        index = toy_index([[1.0], [1.0], [1.0]])
        out = R.top_k(index, np.array([1.0]), 3)
        assert out.doc_ids.tolist() == [0, 1, 2]

    def test_k_larger_than_n(self):
        index = toy_index([[1.0], [2.0]])
        assert len(R.top_k(index, np.array([1.0]), 10).doc_ids) == 2

    def test_matches_full_sort_oracle(self):
        rng = make_rng(0)
        for trial in range(100):
            n = int(rng.integers(5, 2000))
            k_dim = int(rng.integers(2, 8))
            mat = rng.normal(size=(n, k_dim))
            if trial % 3 == 0:  # force ties
                mat[: n // 2] = mat[0]
            index = toy_index(mat)
            q = rng.normal(size=k_dim)
            scores = mat @ q
            order = sorted(range(n), key=lambda i: (-scores[i], i))
            for k in (1, 5, 10, 100):
                out = R.top_k(index, q, k)
                assert out.doc_ids.tolist() == order[: min(k, n)]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            R.top_k(toy_index([[1.0, 2.0]]), np.array([1.0]), 1)

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            R.top_k(toy_index([[1.0]]), np.array([1.0]), 0)


class TestRerank:
    def test_single_candidate(self):
        scorer = R.IndexScorer(toy_index([[5.0], [1.0]]))
        out = R.rerank([1], scorer, np.array([1.0]))
        assert out.doc_ids.tolist() == [1]

    def test_matches_restricted_top_k(self):
        rng = make_rng(1)
        index = toy_index(rng.normal(size=(50, 4)))
        q = rng.normal(size=4)
        cands = list(rng.choice(50, size=20, replace=False))
        out = R.rerank(cands, R.IndexScorer(index), q)
        scores = index.matrix @ q
        expected = sorted(cands, key=lambda i: (-scores[i], i))
        assert out.doc_ids.tolist() == expected

    def test_input_order_irrelevant(self):
        rng = make_rng(2)
        index = toy_index(rng.normal(size=(20, 3)))
        q = rng.normal(size=3)
        a = R.rerank([3, 7, 11, 2], R.IndexScorer(index), q)
        b = R.rerank([2, 11, 3, 7], R.IndexScorer(index), q)
        assert a.doc_ids.tolist() == b.doc_ids.tolist()

    def test_candidate_set_preserved(self):
        rng = make_rng(3)
        index = toy_index(rng.normal(size=(30, 3)))
        cands = [4, 9, 14]
        out = R.rerank(cands, R.IndexScorer(index), rng.normal(size=3))
        assert sorted(out.doc_ids.tolist()) == sorted(cands)

    def test_unknown_candidate_rejected(self):
        with pytest.raises(KeyError, match="unknown doc id"):
            R.rerank([99], R.IndexScorer(toy_index([[1.0]])), np.array([1.0]))


class TestMetrics:
    def test_recall_hand_cases(self):
        judge = R.Judgments({0: {7}})
        assert R.recall_at_k([ranked(0, [7, 1, 2, 3, 4])], judge, 5) == 1.0
        assert R.recall_at_k([ranked(0, [1, 2, 3, 4, 5, 7])], judge, 5) == 0.0

    def test_recall_hand_count(self):
        judge = R.Judgments({0: {10}, 1: {11}, 2: {12}})
        rankings = [
            ranked(0, [10, 0, 1, 2, 3, 4, 5]),
            ranked(1, [0, 1, 2, 3, 4, 5, 11]),  # rank 7
            ranked(2, [0, 1, 12, 2, 3, 4, 5]),  # rank 3
        ]
        assert R.recall_at_k(rankings, judge, 5) == pytest.approx(2 / 3)

    def test_recall_nondecreasing_in_k(self):
        rng = make_rng(4)
        judge = R.Judgments({i: {int(rng.integers(20))} for i in range(10)})
        rankings = [ranked(i, rng.permutation(20)) for i in range(10)]
        vals = [R.recall_at_k(rankings, judge, k) for k in range(1, 21)]
        assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_missing_judgment_rejected(self):
        with pytest.raises(KeyError, match="missing judgment"):
            R.recall_at_k([ranked(5, [1])], R.Judgments({0: {1}}), 1)

    def test_mrr_hand_cases(self):
        judge = R.Judgments({0: {9}})
        assert R.mrr_at_10([ranked(0, [1, 9, 2])], judge) == pytest.approx(50.0)
        assert R.mrr_at_10([ranked(0, list(range(10)) + [99])],
                           R.Judgments({0: {99}})) == 0.0

    def test_mrr_two_queries(self):
        judge = R.Judgments({0: {5}, 1: {6}})
        rankings = [ranked(0, [5, 1, 2, 3]), ranked(1, [1, 2, 3, 6])]
        assert R.mrr_at_10(rankings, judge) == pytest.approx(62.5)

    def test_mrr_bounded_by_recall(self):
        rng = make_rng(5)
        judge = R.Judgments({i: {int(rng.integers(30))} for i in range(20)})
        rankings = [ranked(i, rng.permutation(30)) for i in range(20)]
        assert R.mrr_at_10(rankings, judge) <= 100.0 * R.recall_at_k(rankings, judge, 10) + 1e-9

    def test_ndcg_hand_cases(self):
        judge = R.Judgments({0: {3}})
        assert R.ndcg_at_10([ranked(0, [3, 1, 2])], judge) == pytest.approx(100.0)
        expected = 100.0 * math.log2(2) / math.log2(3)
        assert R.ndcg_at_10([ranked(0, [1, 3, 2])], judge) == pytest.approx(expected)

    def test_ndcg_perfect_when_golden_on_top(self):
        judge = R.Judgments({0: {1, 2}})
        assert R.ndcg_at_10([ranked(0, [1, 2, 3, 4])], judge) == pytest.approx(100.0)

    def test_ndcg_zero_golden_rejected(self):
        with pytest.raises(ValueError, match="no golden"):
            R.ndcg_at_10([ranked(0, [1])], R.Judgments({0: set()}))

    def test_metric_brute_force_oracles(self):
        """Independent loop-based definitions on random small ranking sets."""
        rng = make_rng(6)
        for _ in range(50):
            n_docs = int(rng.integers(5, 30))
            n_queries = int(rng.integers(2, 8))
            judge = R.Judgments({}, {})
            rankings = []
            doc_texts = {d: f"w{d} common" for d in range(n_docs)}
            for qid in range(n_queries):
                golden = set(int(g) for g in
                             rng.choice(n_docs, size=int(rng.integers(1, 3)),
                                        replace=False))
                judge.golden[qid] = golden
                judge.answers[qid] = [f"w{min(golden)}"]
                rankings.append(ranked(qid, rng.permutation(n_docs)))
            k = int(rng.integers(1, 12))

            # recall oracle
            hits = sum(1 for r in rankings
                       if any(d in judge.golden[r.query_id] for d in r.doc_ids[:k]))
            assert R.recall_at_k(rankings, judge, k) == pytest.approx(
                hits / n_queries, abs=1e-12)

            # mrr oracle
            total = 0.0
            for r in rankings:
                for rank, d in enumerate(r.doc_ids[:10], start=1):
                    if int(d) in judge.golden[r.query_id]:
                        total += 1.0 / rank
                        break
            assert R.mrr_at_10(rankings, judge) == pytest.approx(
                100.0 * total / n_queries, abs=1e-12)

            # ndcg oracle
            total = 0.0
            for r in rankings:
                golden = judge.golden[r.query_id]
                dcg = sum(1.0 / math.log2(rank + 1)
                          for rank, d in enumerate(r.doc_ids[:10], start=1)
                          if int(d) in golden)
                ideal = sum(1.0 / math.log2(i + 1)
                            for i in range(1, min(len(golden), 10) + 1))
                total += dcg / ideal
            assert R.ndcg_at_10(rankings, judge) == pytest.approx(
                100.0 * total / n_queries, abs=1e-12)

            # relaxed recall oracle
            hits = 0
            for r in rankings:
                ans = judge.answers[r.query_id]
                hits += any(any(a in doc_texts[int(d)] for a in ans)
                            for d in r.doc_ids[:k])
            assert R.relaxed_recall_at_k(rankings, judge, doc_texts, k) == \
                pytest.approx(hits / n_queries, abs=1e-12)


class TestRelaxedRecall:
    def test_answer_in_top_doc_counts(self):
        judge = R.Judgments({0: {5}}, {0: ["needle"]})
        texts = {1: "hay needle stack", 5: "elsewhere"}
        assert R.relaxed_recall_at_k([ranked(0, [1, 5])], judge, texts, 1) == 1.0

    def test_answer_absent_not_counted(self):
        judge = R.Judgments({0: {5}}, {0: ["needle"]})
        texts = {1: "hay", 5: "stack"}
        assert R.relaxed_recall_at_k([ranked(0, [1, 5])], judge, texts, 2) == 0.0

    def test_missing_answers_rejected(self):
        judge = R.Judgments({0: {1}})
        with pytest.raises(KeyError, match="missing answers"):
            R.relaxed_recall_at_k([ranked(0, [1])], judge, {1: "x"}, 1)

    def test_relaxed_at_least_strict_on_synthetic_corpus(self):
        corpus = datasim.generate_corpus(3, 6, 5, 100, 10, 4, seed=3)
        vocab = E.build_vocab([d.text for d in corpus.documents])
        rng = make_rng(7)
        index = R.DocumentIndex(
            np.asarray([d.doc_id for d in corpus.documents]),
            rng.normal(size=(len(corpus.documents), 4)))
        judge = R.Judgments({q.query_id: corpus.qrels[q.query_id] for q in corpus.queries},
                            {q.query_id: q.answers for q in corpus.queries})
        texts = {d.doc_id: d.text for d in corpus.documents}
        rankings = [R.top_k(index, rng.normal(size=4), 10, q.query_id)
                    for q in corpus.queries]
        for k in (1, 3, 5, 10):
            strict = R.recall_at_k(rankings, judge, k)
            relaxed = R.relaxed_recall_at_k(rankings, judge, texts, k)
            assert relaxed >= strict - 1e-12


class TestIndexIO:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = make_rng(8)
        index = R.DocumentIndex(np.arange(7), rng.normal(size=(7, 3)),
                                encoder_hash="abc", pooling="mean", empty_query=True)
        path = tmp_path / "index.jsonl"
        R.save_index(index, path)
        loaded = R.load_index(path)
        np.testing.assert_array_equal(loaded.matrix, index.matrix)
        np.testing.assert_array_equal(loaded.doc_ids, index.doc_ids)
        assert loaded.encoder_hash == "abc"
        assert loaded.empty_query is True
        # saving again produces identical bytes
        path2 = tmp_path / "again.jsonl"
        R.save_index(loaded, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_row_count_validated(self, tmp_path):
        rng = make_rng(9)
        index = R.DocumentIndex(np.arange(3), rng.normal(size=(3, 2)))
        path = tmp_path / "index.jsonl"
        R.save_index(index, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(ValueError, match="row count"):
            R.load_index(path)

    def test_rankings_tsv_roundtrip(self, tmp_path):
        rng = make_rng(10)
        rankings = [R.RankedList(3, np.array([5, 1, 9]), rng.normal(size=3)),
                    R.RankedList(7, np.array([2]), rng.normal(size=1))]
        path = tmp_path / "rankings.tsv"
        R.write_rankings_tsv(rankings, path)
        loaded = R.read_rankings_tsv(path)
        assert loaded[0].query_id == 3
        np.testing.assert_array_equal(loaded[0].doc_ids, rankings[0].doc_ids)
        np.testing.assert_array_equal(loaded[0].scores, rankings[0].scores)
