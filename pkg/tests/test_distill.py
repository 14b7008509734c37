import dataclasses
import json

import numpy as np
import pytest

from distilir import datasim, distill, retrieval
from distilir import encoders as E
from distilir.numerics import grad_check, make_rng
from distilir.optim import AdamW, warmup_linear_lr


@pytest.fixture(scope="module")
def small_world():
    """Tiny corpus + tokenized data + a briefly trained DE teacher."""
    corpus = datasim.generate_corpus(num_topics=3, docs_per_topic=8,
                                     queries_per_topic=10, vocab_size=100,
                                     doc_len=10, query_len=5, seed=0)
    vocab = E.build_vocab([d.text for d in corpus.documents] +
                          [q.text for q in corpus.queries])
    examples = datasim.make_training_examples(corpus, 4, seed=0)
    data = distill.tokenize_data(corpus.documents, corpus.queries, examples, vocab)
    cfg = distill.TrainConfig(steps=150, batch_size=8, seed=0)
    teacher, _ = distill.train_teacher(
        "de", data, cfg, distill.ArchSpec(hidden=12, out_dim=8, shared=True))
    tokenizer = lambda text: E.tokenize(text, vocab)
    index = retrieval.build_index(teacher.doc_encoder, corpus.documents, tokenizer)
    return corpus, vocab, data, teacher, index


class TestSchedule:
    def test_endpoints_and_peak(self):
        cfg = distill.TrainConfig(steps=100, peak_lr=2.0, warmup_frac=0.1)
        assert distill.lr_at(0, cfg) == 0.0
        assert distill.lr_at(10, cfg) == pytest.approx(2.0)
        assert distill.lr_at(100, cfg) == 0.0

    def test_linear_in_both_phases(self):
        cfg = distill.TrainConfig(steps=100, peak_lr=1.0, warmup_frac=0.2)
        assert distill.lr_at(5, cfg) == pytest.approx(0.25)
        assert distill.lr_at(60, cfg) == pytest.approx(0.5)

    def test_out_of_range_rejected(self):
        cfg = distill.TrainConfig(steps=10)
        with pytest.raises(ValueError, match="out of range"):
            distill.lr_at(11, cfg)
        with pytest.raises(ValueError, match="out of range"):
            distill.lr_at(-1, cfg)

    def test_bad_warmup_fraction(self):
        with pytest.raises(ValueError):
            warmup_linear_lr(0, 10, 1.0, 1.0)


class TestAdamW:
    def test_decay_shrinks_unused_weights(self):
        p = np.ones((3, 3))
        opt = AdamW([p], weight_decay=0.1)
        opt.step([np.zeros((3, 3))], lr=0.1)
        assert np.all(p < 1.0)

    def test_bias_never_decayed(self):
        p = np.ones(3)
        opt = AdamW([p], weight_decay=0.5)
        opt.step([np.zeros(3)], lr=0.1)
        np.testing.assert_array_equal(p, np.ones(3))

    def test_descends_quadratic(self):
        p = np.array([5.0, -3.0])
        opt = AdamW([p], weight_decay=0.0)
        for _ in range(500):
            opt.step([2.0 * p], lr=0.05)
        assert np.abs(p).max() < 1e-2

    def test_non_finite_gradient_rejected(self):
        opt = AdamW([np.ones(2)])
        with pytest.raises(FloatingPointError):
            opt.step([np.array([1.0, np.nan])], lr=0.1)


class TestTeacherTraining:
    def test_zero_steps_returns_initialization(self, small_world):
        _, _, data, _, _ = small_world
        cfg = distill.TrainConfig(steps=0, seed=3)
        arch = distill.ArchSpec(hidden=10, out_dim=6)
        model, history = distill.train_teacher("de", data, cfg, arch)
        fresh = E.init_encoder(data.vocab.size, 10, 6, 1, arch.pooling,
                               seed=__import__("distilir.numerics", fromlist=["derive_seed"]).derive_seed(3, "teacher_q"))
        np.testing.assert_array_equal(model.query_encoder.embed, fresh.embed)
        assert history.rows == []

    def test_loss_decreases(self, small_world):
        _, _, data, _, _ = small_world
        cfg = distill.TrainConfig(steps=200, batch_size=8, seed=1)
        _, history = distill.train_teacher("de", data, cfg,
                                           distill.ArchSpec(hidden=12, out_dim=8))
        total = history.component("total")
        assert total[-20:].mean() < total[:20].mean()

    def test_deterministic_given_seed(self, small_world):
        _, _, data, _, _ = small_world
        cfg = distill.TrainConfig(steps=60, batch_size=4, seed=5)
        arch = distill.ArchSpec(hidden=8, out_dim=6)
        m1, _ = distill.train_teacher("de", data, cfg, arch)
        m2, _ = distill.train_teacher("de", data, cfg, arch)
        assert E.checkpoint_bytes(m1) == E.checkpoint_bytes(m2)

    def test_ce_dual_objective_components(self, small_world):
        _, _, data, _, _ = small_world
        cfg = distill.TrainConfig(steps=30, batch_size=4, seed=2)
        model, history = distill.train_teacher(
            "ce_dual", data, cfg, distill.ArchSpec(hidden=10, out_dim=6),
            recon_weight=0.5)
        assert model.is_dual
        row = history.rows[0]
        assert row["total"] == pytest.approx(row["onehot"] + 0.5 * row["recon"],
                                             abs=1e-10)

    def test_unknown_kind(self, small_world):
        _, _, data, _, _ = small_world
        with pytest.raises(ValueError, match="unknown teacher kind"):
            distill.train_teacher("gan", data, distill.TrainConfig(steps=1))

    def test_empty_dataset_rejected(self, small_world):
        _, vocab, _, _, _ = small_world
        empty = distill.TokenizedData(vocab, {}, {}, [])
        with pytest.raises(ValueError, match="empty dataset"):
            distill.train_teacher("de", empty, distill.TrainConfig(steps=1))


class TestDistiller:
    def _cfg(self, mode, **kw):
        return distill.StudentConfig(mode=mode, hidden=8, out_dim=8, **kw)

    def test_teacher_bytes_identical_after_steps(self, small_world):
        _, _, data, teacher, index = small_world
        before = E.checkpoint_bytes(teacher)
        d = distill.Distiller(teacher, data, self._cfg("inherit_docs"),
                              distill.LossWeights(embed_q=1.0),
                              distill.TrainConfig(steps=5, batch_size=4, seed=0),
                              doc_index=index)
        for _ in range(5):
            d.distill_step([0, 1, 2, 3], lr=1e-3)
        assert E.checkpoint_bytes(teacher) == before

    def test_inherited_index_bit_identical(self, small_world):
        _, _, data, teacher, index = small_world
        matrix_before = index.matrix.copy()
        d = distill.Distiller(teacher, data, self._cfg("inherit_docs"),
                              distill.LossWeights(embed_q=1.0),
                              distill.TrainConfig(steps=5, batch_size=4, seed=0),
                              doc_index=index)
        for _ in range(5):
            d.distill_step([0, 1, 2, 3], lr=1e-3)
        np.testing.assert_array_equal(index.matrix, matrix_before)

    def test_clone_student_zero_embed_loss(self, small_world):
        """Student identical to teacher with identity projection: the
        query-side matching loss and its gradient vanish."""
        _, _, data, teacher, index = small_world
        scfg = distill.StudentConfig(mode="symmetric", hidden=12, out_dim=8,
                                     shared=True)
        w = distill.LossWeights(onehot=0.0, score_distill=0.0, embed_q=1.0)
        d = distill.Distiller(teacher, data, scfg, w,
                              distill.TrainConfig(steps=1, batch_size=4, seed=0))
        # overwrite the student towers with the teacher's parameters
        for a, b in zip(d.q_enc.param_arrays(),
                        teacher.query_encoder.param_arrays()):
            a[...] = b
        components, grads = d.loss_and_grads([0, 1, 2, 3])
        assert components["embed_q"] == pytest.approx(0.0, abs=1e-12)
        assert components["total"] == pytest.approx(0.0, abs=1e-12)
        for g in grads:
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_score_distill_at_teacher_scores_is_entropy_minimum(self, small_world):
        _, _, data, teacher, index = small_world
        scfg = distill.StudentConfig(mode="symmetric", hidden=12, out_dim=8,
                                     shared=True)
        w = distill.LossWeights(onehot=0.0, score_distill=1.0)
        d = distill.Distiller(teacher, data, scfg, w,
                              distill.TrainConfig(steps=1, batch_size=2, seed=0))
        for a, b in zip(d.q_enc.param_arrays(),
                        teacher.query_encoder.param_arrays()):
            a[...] = b
        components, _ = d.loss_and_grads([0, 1])
        # self-match: distillation component equals the teacher softmax entropy
        from distilir.losses import softmax_ce_distill
        expected = 0.0
        for i in (0, 1):
            ex = data.examples[i]
            st = d._t_scores[ex.query_id]
            expected += softmax_ce_distill(st, st).value / 2
        assert components["score_distill"] == pytest.approx(expected, abs=1e-10)

    def test_components_match_single_loss_oracles(self, small_world):
        """Batch components equal independent per-example evaluations."""
        from distilir import losses as L
        _, _, data, teacher, index = small_world
        scfg = self._cfg("inherit_docs")
        w = distill.LossWeights(onehot=1.0, score_distill=1.0, embed_q=0.5)
        tc = distill.TrainConfig(steps=1, batch_size=3, seed=4)
        d = distill.Distiller(teacher, data, scfg, w, tc, doc_index=index)
        idxs = [1, 4, 7]
        components, _ = d.loss_and_grads(idxs)

        onehot = score = 0.0
        q_embs, t_embs = [], []
        for i in idxs:
            ex = data.examples[i]
            q_emb = E.encode(d.q_enc, data.query_tokens[ex.query_id])
            eff = E.project(d.proj, q_emb)
            rows = index.rows(ex.doc_ids)
            scores = rows @ eff
            onehot += L.softmax_ce_onehot(scores, ex.labels).value / 3
            score += L.softmax_ce_distill(scores, d._t_scores[ex.query_id],
                                          tc.temperature).value / 3
            q_embs.append(q_emb)
            t_embs.append(d._t_query[ex.query_id])
        embed = L.embed_match_loss(np.stack(t_embs), np.stack(q_embs), d.proj).value
        assert components["onehot"] == pytest.approx(onehot, abs=1e-10)
        assert components["score_distill"] == pytest.approx(score, abs=1e-10)
        assert components["embed_q"] == pytest.approx(embed, abs=1e-10)
        total = w.onehot * onehot + w.score_distill * score + w.embed_q * embed
        assert components["total"] == pytest.approx(total, abs=1e-10)

    @pytest.mark.parametrize("mode,shared", [("symmetric", False),
                                             ("symmetric", True),
                                             ("inherit_docs", False)])
    def test_full_objective_gradient_check(self, small_world, mode, shared):
        """End-to-end distillation gradient (towers + projection) matches
        finite differences."""
        _, _, data, teacher, index = small_world
        scfg = distill.StudentConfig(mode=mode, hidden=6, out_dim=5,
                                     shared=shared)
        w = distill.LossWeights(onehot=1.0, score_distill=1.0, embed_q=0.7,
                                embed_d=0.3 if mode == "symmetric" else 0.0)
        d = distill.Distiller(teacher, data, scfg, w,
                              distill.TrainConfig(steps=1, batch_size=3, seed=0,
                                                  temperature=2.0),
                              doc_index=index if mode == "inherit_docs" else None)
        params = d.opt.params
        sizes = [p.size for p in params]
        idxs = [0, 2, 5]

        def loss_fn(flat):
            off = 0
            for p, sz in zip(params, sizes):
                p[...] = flat[off:off + sz].reshape(p.shape)
                off += sz
            comp, grads = d.loss_and_grads(idxs)
            return comp["total"], np.concatenate([g.ravel() for g in grads])

        flat0 = np.concatenate([p.ravel() for p in params])
        assert grad_check(loss_fn, flat0, eps=1e-6) < 1e-5

    def test_embed_d_forced_zero_in_inherit_mode(self, small_world):
        _, _, data, teacher, index = small_world
        w = distill.LossWeights(onehot=1.0, embed_d=5.0)
        d = distill.Distiller(teacher, data, self._cfg("inherit_docs"), w,
                              distill.TrainConfig(steps=1, batch_size=2, seed=0),
                              doc_index=index)
        assert d.weights.embed_d == 0.0

    def test_inherit_requires_index(self, small_world):
        _, _, data, teacher, _ = small_world
        with pytest.raises(ValueError, match="document index"):
            distill.Distiller(teacher, data, self._cfg("inherit_docs"),
                              distill.LossWeights(),
                              distill.TrainConfig(steps=1))

    def test_weighted_sum_consistency_over_training(self, small_world):
        _, _, data, teacher, index = small_world
        p = distill.preset("embed-match")
        scfg = self._cfg("inherit_docs")
        tc = distill.TrainConfig(steps=40, batch_size=4, seed=0)
        d = distill.Distiller(teacher, data, scfg, p.weights, tc, doc_index=index)
        _, history = d.train()
        w = d.weights
        for row in history.rows:
            expected = (w.onehot * row["onehot"]
                        + w.score_distill * row["score_distill"]
                        + w.embed_q * row["embed_q"]
                        + w.embed_d * row["embed_d"]
                        + w.aug_embed_q * row["aug_embed_q"])
            assert row["total"] == pytest.approx(expected, abs=1e-10)

    def test_determinism_identical_checkpoints(self, small_world):
        _, _, data, teacher, index = small_world
        p = distill.preset("embed-match")
        scfg = self._cfg("inherit_docs")
        tc = distill.TrainConfig(steps=30, batch_size=4, seed=9)
        s1, _ = distill.train_student(teacher, scfg, data, p.weights, tc,
                                      doc_index=index)
        s2, _ = distill.train_student(teacher, scfg, data, p.weights, tc,
                                      doc_index=index)
        obj1 = json.dumps(distill.student_checkpoint_obj(s1), sort_keys=True)
        obj2 = json.dumps(distill.student_checkpoint_obj(s2), sort_keys=True)
        assert obj1 == obj2

    def test_augmented_queries_only_add_matching_terms(self, small_world):
        corpus, vocab, data, teacher, index = small_world
        aug = [(data.examples[0].query_id,
                data.query_tokens[data.examples[0].query_id].copy()),
               (data.examples[1].query_id,
                data.query_tokens[data.examples[1].query_id].copy())]
        w = distill.LossWeights(onehot=1.0, score_distill=1.0, embed_q=1.0,
                                aug_embed_q=1.0)
        d = distill.Distiller(teacher, data, self._cfg("inherit_docs"), w,
                              distill.TrainConfig(steps=1, batch_size=2, seed=0),
                              doc_index=index, aug_queries=aug)
        components, _ = d.loss_and_grads([0, 1])
        assert components["aug_embed_q"] > 0.0
        # history records the component
        _, history = d.train()
        assert all("aug_embed_q" in row for row in history.rows)

    def test_student_checkpoint_roundtrip(self, small_world):
        _, _, data, teacher, index = small_world
        p = distill.preset("embed-match")
        s, _ = distill.train_student(teacher, self._cfg("inherit_docs"), data,
                                     p.weights,
                                     distill.TrainConfig(steps=10, batch_size=4, seed=0),
                                     doc_index=index)
        obj = distill.student_checkpoint_obj(s)
        restored = distill.student_from_checkpoint_obj(obj, doc_index=index)
        np.testing.assert_array_equal(restored.query_encoder.embed,
                                      s.query_encoder.embed)
        np.testing.assert_array_equal(restored.projection.weight,
                                      s.projection.weight)
        assert restored.mode == s.mode


class TestPresets:
    def test_all_ablation_rows_present(self):
        for name in ["direct", "score-distill", "inherit-docs", "embed-match",
                     "embed-match-querygen", "embed-only", "embed-only-querygen",
                     "mini-querygen"]:
            spec = distill.preset(name)
            assert spec.mode in ("symmetric", "inherit_docs")

    def test_embed_only_has_no_label_terms(self):
        spec = distill.preset("embed-only")
        assert spec.weights.onehot == 0.0
        assert spec.weights.score_distill == 0.0
        assert spec.weights.embed_q > 0.0

    def test_mini_preset_uses_heavier_matching(self):
        assert distill.preset("mini-querygen").weights.embed_q == 5.0

    def test_unknown_preset(self):
        with pytest.raises(ValueError, match="unknown preset"):
            distill.preset("nope")


class TestLossWeights:
    def test_all_zero_rejected(self):
        with pytest.raises(ValueError):
            distill.LossWeights(onehot=0.0, score_distill=0.0)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            distill.LossWeights(onehot=-1.0)

    def test_unknown_score_loss(self):
        with pytest.raises(ValueError):
            distill.LossWeights(score_loss="huber")
