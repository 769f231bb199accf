import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selftrain.corpus import Example, LabeledDataset
from selftrain.errors import CorruptFile, EmptyDataset, NonFiniteLoss, VocabHashMismatch, VocabMismatch
from selftrain.model import (
    ClassifierModel, TrainConfig, argmax_lowest, evaluate, gradient, init_random, load, lr_at,
    objective, predict_proba, save, train,
)

V = 12
HASH = "0" * 64


def dataset(docs, labels, C=2):
    examples = tuple(Example(f"e{i}", "x", np.asarray(d, dtype=np.int64)) for i, d in enumerate(docs))
    return LabeledDataset(examples, np.asarray(labels), C)


def random_batch(rng, n=6, C=2, vocab=V):
    docs = [rng.integers(3, vocab, size=rng.integers(1, 7)) for _ in range(n)]
    return dataset(docs, rng.integers(0, C, size=n), C)


def separable(n=20):
    """Class 0 documents use tokens 3-6, class 1 tokens 7-10."""
    rng = np.random.default_rng(0)
    labels = np.arange(n) % 2
    docs = [rng.integers(3, 7, size=5) + 4 * y for y in labels]
    return dataset(docs, labels)


class TestInit:
    def test_deterministic(self):
        a, b = init_random(HASH, 2, 4, 4, seed=5, vocab_size=V), init_random(HASH, 2, 4, 4, seed=5, vocab_size=V)
        assert a.to_bytes() == b.to_bytes()

    def test_seeds_differ(self):
        a, b = init_random(HASH, 2, 4, 4, seed=5, vocab_size=V), init_random(HASH, 2, 4, 4, seed=6, vocab_size=V)
        assert not np.array_equal(a.E, b.E)

    def test_range(self):
        m = init_random(HASH, 3, 8, 8, seed=0, vocab_size=V)
        for p in m.params().values():
            assert np.all(np.abs(p) <= 0.08)


class TestPredict:
    def test_zero_head_uniform(self):
        m = init_random(HASH, 3, 4, 4, seed=0, vocab_size=V)
        m.W2[:] = 0
        m.b2[:] = 0
        np.testing.assert_array_equal(predict_proba(m, [3, 4, 5]), np.full(3, 1 / 3))

    def test_shift_invariance(self):
        m = init_random(HASH, 3, 4, 4, seed=0, vocab_size=V)
        p = predict_proba(m, [3, 4])
        m.b2 += 7.5
        np.testing.assert_allclose(predict_proba(m, [3, 4]), p, atol=1e-9)

    def test_vocab_mismatch(self):
        m = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        with pytest.raises(VocabMismatch):
            predict_proba(m, [V])

    @settings(max_examples=50)
    @given(st.integers(0, 2**31), st.floats(0.1, 30.0))
    def test_normalized_for_extreme_params(self, seed, scale):
        rng = np.random.default_rng(seed)
        m = init_random(HASH, 3, 4, 4, seed=seed, vocab_size=V)
        for p in m.params().values():
            p[...] = rng.normal(scale=scale, size=p.shape)
        probs = predict_proba(m, random_batch(rng, 10, 3))
        assert np.all((probs >= 0) & (probs <= 1))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_argmax_ties_lowest(self):
        assert argmax_lowest(np.array([[0.5, 0.5], [0.2, 0.8], [0.4, 0.4]])).tolist() == [0, 1, 0]
        assert argmax_lowest(np.array([[0.2, 0.4, 0.4]])).tolist() == [1]


class TestEvaluate:
    def test_uniform_model_on_balanced_set(self):
        m = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        m.W2[:] = 0
        m.b2[:] = 0
        assert evaluate(m, separable()) == 0.5

    def test_empty(self):
        m = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        with pytest.raises(EmptyDataset):
            evaluate(m, dataset([], []))


class TestGradient:
    def test_duplicated_batch(self, rng):
        m = init_random(HASH, 2, 4, 4, seed=1, vocab_size=V)
        b = random_batch(rng)
        dup = dataset([ex.tokens for ex in b.examples] * 2, np.tile(b.labels, 2))
        g1, g2 = gradient(m, b, 1e-3), gradient(m, dup, 1e-3)
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)

    def test_fitted_gradient_smaller_than_init(self):
        data = separable()
        m0 = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        fit = m0.copy()
        # class-0 tokens embed to +e0, class-1 tokens to -e0; a saturated head separates them
        fit.E[3:7] = [5, 0, 0, 0]
        fit.E[7:11] = [-5, 0, 0, 0]
        fit.W1[:] = 0
        fit.W1[0, 0] = 5
        fit.b1[:] = 0
        fit.W2[:] = 0
        fit.W2[0] = [10, -10]
        fit.b2[:] = 0
        assert evaluate(fit, data) == 1.0

        def norm(g):
            return math.sqrt(sum(float(np.sum(v * v)) for v in g.values()))

        assert norm(gradient(fit, data)) < norm(gradient(m0, data))

    def test_weight_decay_term(self, rng):
        m = init_random(HASH, 2, 4, 4, seed=1, vocab_size=V)
        b = random_batch(rng)
        reg = 0.5 * 0.1 * (np.sum(m.W1 ** 2) + np.sum(m.W2 ** 2))
        assert objective(m, b, 0.1) == pytest.approx(objective(m, b, 0.0) + reg, rel=1e-12)


class TestTrain:
    def cfg(self, **kw):
        base = dict(learning_rate=0.05, batch_size=4, max_epochs=200, early_stop_patience=200,
                    dropout_rate=0.0, weight_decay=0.0, seed=0)
        return TrainConfig(**{**base, **kw})

    def test_separable_converges(self):
        data = separable()
        m, report = train(init_random(HASH, 2, 4, 4, seed=0, vocab_size=V), data, data,
                          self.cfg(early_stop_patience=20))
        assert evaluate(m, data) == 1.0
        assert len(report.dev_accuracy) <= 200

    def test_first_epoch_loss_near_ln2(self):
        data = separable()
        _, report = train(init_random(HASH, 2, 4, 4, seed=0, vocab_size=V), data, data,
                          self.cfg(learning_rate=1e-4, max_epochs=1))
        assert abs(report.train_loss[0] - math.log(2)) < 0.1

    def test_deterministic(self, small_task):
        cfg = TrainConfig(max_epochs=3, seed=4)
        m0 = init_random(small_task["vocab"], 2, 8, 8, seed=4)
        a, ra = train(m0, small_task["train"], small_task["dev"], cfg)
        b, rb = train(m0, small_task["train"], small_task["dev"], cfg)
        assert a.to_bytes() == b.to_bytes() and ra.to_dict() == rb.to_dict()

    def test_input_model_untouched(self, small_task):
        m0 = init_random(small_task["vocab"], 2, 8, 8, seed=4)
        before = m0.to_bytes()
        train(m0, small_task["train"], small_task["dev"], TrainConfig(max_epochs=2))
        assert m0.to_bytes() == before

    def test_best_checkpoint_dominates_earlier_epochs(self, small_task):
        cfg = TrainConfig(max_epochs=15, early_stop_patience=3, seed=1)
        m, report = train(init_random(small_task["vocab"], 2, 8, 8, seed=1), small_task["train"],
                          small_task["dev"], cfg)
        best = report.dev_accuracy[report.best_epoch]
        assert all(best > a for a in report.dev_accuracy[:report.best_epoch])
        assert all(best >= a for a in report.dev_accuracy)
        assert evaluate(m, small_task["dev"]) == best
        if report.stopped_early:
            assert len(report.dev_accuracy) - 1 - report.best_epoch == cfg.early_stop_patience

    def test_dropout_inference_noop(self, small_task):
        m, _ = train(init_random(small_task["vocab"], 2, 8, 8, seed=1), small_task["train"],
                     small_task["dev"], TrainConfig(max_epochs=2, dropout_rate=0.5))
        assert evaluate(m, small_task["test"]) == evaluate(m, small_task["test"])

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss(self):
        data = separable()
        m = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        m.W2[:] = np.inf
        with pytest.raises(NonFiniteLoss) as exc:
            train(m, data, data, self.cfg())
        assert exc.value.step == 0

    def test_batch_ids_cover_epoch(self):
        data = separable(10)
        seen = []
        train(init_random(HASH, 2, 4, 4, seed=0, vocab_size=V), data, data,
              self.cfg(max_epochs=1, batch_size=3), on_batch=seen.append)
        assert [len(b) for b in seen] == [3, 3, 3, 1]
        assert sorted(i for b in seen for i in b) == sorted(data.ids)

    @pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"batch_size": 0}, {"dropout_rate": 1.0}])
    def test_config_invariants(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestSchedule:
    def test_warmup_then_linear_decay(self):
        cfg = TrainConfig(learning_rate=1.0, warmup_frac=0.1)
        lrs = [lr_at(s, 100, cfg) for s in range(100)]
        assert lrs[:10] == [(s + 1) / 10 for s in range(10)]
        assert lrs[10] == 1.0
        assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))
        assert lrs[-1] == pytest.approx(1 / 90)


class TestPersistence:
    def test_round_trip(self, tmp_path, small_task):
        m = init_random(small_task["vocab"], 2, 8, 8, seed=2)
        save(m, tmp_path / "m.stck")
        m2 = load(tmp_path / "m.stck", small_task["vocab"])
        np.testing.assert_array_equal(predict_proba(m, small_task["test"]),
                                      predict_proba(m2, small_task["test"]))
        assert m2.to_bytes() == m.to_bytes()

    def test_truncated(self, tmp_path):
        m = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        blob = m.to_bytes()
        (tmp_path / "m.stck").write_bytes(blob[: len(blob) // 2])
        with pytest.raises(CorruptFile):
            load(tmp_path / "m.stck")

    def test_wrong_vocab(self, tmp_path, small_task):
        m = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        save(m, tmp_path / "m.stck")
        with pytest.raises(VocabHashMismatch):
            load(tmp_path / "m.stck", small_task["vocab"])

    def test_is_classifier(self, tmp_path):
        m = init_random(HASH, 2, 4, 4, seed=0, vocab_size=V)
        save(m, tmp_path / "m.stck")
        assert isinstance(load(tmp_path / "m.stck"), ClassifierModel)
