import numpy as np
import pytest

from distilir import queryaug as QA
from distilir.encoders import MASK_ID, PAD_ID
from distilir.numerics import make_rng


def toy_queries(n=60, vocab_size=40, max_words=6, seed=0):
    rng = make_rng(seed)
    out = []
    for _ in range(n):
        length = int(rng.integers(3, max_words + 1))
        out.append(rng.integers(5, vocab_size, size=length).astype(np.int64))
    return out


@pytest.fixture(scope="module")
def trained_ae():
    queries = toy_queries()
    cfg = QA.AutoencoderConfig(hidden=32, max_len=8, steps=1200, batch_size=16,
                               seed=0, train_sigma=0.02, train_mask_prob=0.02)
    ae, checkpoints = QA.train_autoencoder(queries, vocab_size=40, cfg=cfg)
    return queries, ae, checkpoints


class TestTraining:
    def test_untrained_accuracy_near_chance(self):
        queries = toy_queries(n=30)
        cfg = QA.AutoencoderConfig(hidden=16, max_len=8, seed=1)
        ae = QA.init_autoencoder(40, cfg)
        tok_acc, exact = QA.roundtrip_stats(ae, queries)
        assert tok_acc < 0.2
        assert exact < 0.1

    def test_roundtrip_accuracy_after_training(self, trained_ae):
        queries, ae, _ = trained_ae
        tok_acc, exact = QA.roundtrip_stats(ae, queries)
        assert exact >= 0.9
        assert tok_acc >= 0.9

    def test_accuracy_nondecreasing_over_checkpoints(self, trained_ae):
        _, _, checkpoints = trained_ae
        accs = [c[2] for c in checkpoints]
        assert all(a <= b + 1e-12 for a, b in zip(accs, accs[1:]))

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            QA.train_autoencoder([], vocab_size=40)


class TestGeneration:
    def test_no_perturbation_is_roundtrip(self, trained_ae):
        queries, ae, _ = trained_ae
        x = queries[0]
        out = QA.generate_queries(ae, x, n=1, sigma=0.0, mask_prob=0.0, seed=0)
        recon = QA.greedy_decode(ae, QA.encode_latent(ae, QA.content_tokens(x, ae.max_len)))
        np.testing.assert_array_equal(out[0], recon)

    def test_deterministic_given_seed(self, trained_ae):
        queries, ae, _ = trained_ae
        a = QA.generate_queries(ae, queries[3], n=3, sigma=0.2, mask_prob=0.2, seed=7)
        b = QA.generate_queries(ae, queries[3], n=3, sigma=0.2, mask_prob=0.2, seed=7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
        c = QA.generate_queries(ae, queries[3], n=3, sigma=0.2, mask_prob=0.2, seed=8)
        assert any(not np.array_equal(x, y) for x, y in zip(a, c))

    def test_output_count_and_structure(self, trained_ae):
        queries, ae, _ = trained_ae
        outs = QA.generate_queries(ae, queries[1], n=2, sigma=0.1, mask_prob=0.1,
                                   seed=0)
        assert len(outs) == 2
        for o in outs:
            assert len(o) <= ae.max_len
            assert PAD_ID not in o.tolist()

    def test_bad_parameters_rejected(self, trained_ae):
        queries, ae, _ = trained_ae
        with pytest.raises(ValueError):
            QA.generate_queries(ae, queries[0], 1, sigma=-0.1, mask_prob=0.0, seed=0)
        with pytest.raises(ValueError):
            QA.generate_queries(ae, queries[0], 1, sigma=0.0, mask_prob=1.5, seed=0)

    def test_masking_consumes_rng(self, trained_ae):
        queries, ae, _ = trained_ae
        x = queries[2]
        no_mask = QA.generate_queries(ae, x, 4, sigma=0.0, mask_prob=0.0, seed=3)
        masked = QA.generate_queries(ae, x, 4, sigma=0.0, mask_prob=0.9, seed=3)
        assert any(not np.array_equal(a, b) for a, b in zip(no_mask, masked))


class TestContentTokens:
    def test_specials_stripped(self):
        seq = np.array([1, 5, 6, 2, 0, 0])
        np.testing.assert_array_equal(QA.content_tokens(seq, 8), [5, 6])

    def test_truncated_to_max_len(self):
        seq = np.arange(5, 20)
        assert len(QA.content_tokens(seq, 4)) == 4

    def test_mask_token_preserved(self):
        seq = np.array([5, MASK_ID, 6])
        np.testing.assert_array_equal(QA.content_tokens(seq, 8), [5, MASK_ID, 6])


class TestJsonl:
    def test_roundtrip(self, tmp_path):
        records = [
            {"source_query_id": 4, "generated_tokens": np.array([5, 6]),
             "sigma": 0.1, "mask_prob": 0.1, "seed": 0},
            {"source_query_id": 9, "generated_tokens": np.array([7]),
             "sigma": 0.2, "mask_prob": 0.0, "seed": 1},
        ]
        path = tmp_path / "gen.jsonl"
        QA.write_generated_jsonl(records, path)
        loaded = QA.read_generated_jsonl(path)
        assert loaded[0]["source_query_id"] == 4
        np.testing.assert_array_equal(loaded[0]["generated_tokens"], [5, 6])
        assert loaded[1]["sigma"] == 0.2
