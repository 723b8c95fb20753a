import math

import numpy as np
import pytest

from hashguard.data import Dataset
from hashguard.defense import (DefenseHyper, DefenseModel, NoiseSpec,
                               calibrate_threshold, classifier_forward,
                               init_defense_model, inject_noise,
                               inject_noise_batch, joint_loss, load_defense,
                               predict, predict_with_rejection,
                               reconstruction_error, reconstruction_errors,
                               sample_distinct_cells, store_defense, train_defense)
from hashguard.hashing import IdentityTransform, sample_lsh
from hashguard.metrics import REJECTED
from hashguard.nn import DenseLayer, Network, RowwiseFirstLayer


class FixedNormalRng:
    """Wraps a real generator but pins normal() draws to given values."""

    def __init__(self, normals, seed=0):
        self._normals = np.atleast_1d(np.asarray(normals, dtype=np.float64))
        self._rng = np.random.default_rng(seed)

    def normal(self, loc=0.0, scale=1.0, size=None):
        if size is None:
            return float(self._normals[0])
        return np.resize(self._normals, size)

    def __getattr__(self, name):
        return getattr(self._rng, name)


class TestNoise:
    def test_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec(-1.0, 10)
        with pytest.raises(ValueError):
            NoiseSpec(1.0, 0)
        assert NoiseSpec(8.0, 1024).scale == pytest.approx(8 / 1024)

    def test_exact_flip_count(self):
        m = np.zeros((4, 10), np.uint8)
        spec = NoiseSpec(8.0, 100)
        for p in (0.013, 0.2, 0.77):
            rng = FixedNormalRng([p])
            out = inject_noise(m, spec, rng)
            assert (out != m).sum() == math.ceil(40 * p)
            assert out.dtype == np.uint8 and set(np.unique(out)) <= {0, 1}

    def test_negative_draw_means_no_flip(self):
        m = np.ones((3, 5), np.uint8)
        out = inject_noise(m, NoiseSpec(4.0, 50), FixedNormalRng([-0.4]))
        assert np.array_equal(out, m)

    def test_input_not_mutated(self):
        m = np.zeros((3, 5), np.uint8)
        inject_noise(m, NoiseSpec(4.0, 10), FixedNormalRng([0.5]))
        assert m.sum() == 0

    def test_batch_per_sample_counts(self):
        m = np.zeros((3, 4, 10), np.uint8)
        ps = [0.05, 0.0, 0.3]
        out = inject_noise_batch(m, NoiseSpec(8.0, 100), FixedNormalRng(ps))
        flips = (out != m).reshape(3, -1).sum(axis=1)
        assert flips.tolist() == [math.ceil(40 * p) for p in ps]

    def test_batch_deterministic(self):
        m = (np.random.default_rng(0).random((5, 2, 20)) < 0.5).astype(np.uint8)
        spec = NoiseSpec(30.0, 100)
        a = inject_noise_batch(m, spec, np.random.default_rng(7))
        b = inject_noise_batch(m, spec, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_distinct_cell_sampler(self):
        rng = np.random.default_rng(1)
        rows, cols = sample_distinct_cells(rng, 4, 20, [3, 0, 20, 5])
        assert len(rows) == 28
        for r in range(4):
            mine = cols[rows == r]
            assert len(set(mine.tolist())) == len(mine)
        with pytest.raises(ValueError):
            sample_distinct_cells(rng, 2, 5, [6, 0])


def exact_reconstruction_model(n=4, big=50.0):
    """Identity transform; encoder copies the matrix; decoder logits are
    +-big exactly where the input cell is 1/0."""
    transform = IdentityTransform(n)
    rowwise = RowwiseFirstLayer(np.eye(n)[None, :, :], np.zeros((1, n)), "relu")
    enc = DenseLayer(np.eye(n), np.zeros(n), "relu")
    hid = DenseLayer(np.ones((2, n)), np.zeros(2), "relu")
    out = DenseLayer(np.ones((2, 2)), np.zeros(2), "identity")
    dec = DenseLayer(2 * big * np.eye(n), -big * np.ones(n), "identity")
    return DefenseModel(transform, rowwise, Network([enc, hid, out]), dec,
                        lambda_d=1.0, noise=NoiseSpec(1.0, n))


class TestReconstruction:
    def test_perfect_decoder_error_near_zero(self):
        model = exact_reconstruction_model()
        m = np.array([[1, 0, 0, 1]], np.float64)
        assert reconstruction_error(model, m) < 1e-6

    def test_uninformative_decoder_is_log_two(self):
        model = exact_reconstruction_model()
        model.decoder.w[...] = 0.0
        model.decoder.b[...] = 0.0
        m = np.array([[1, 0, 1, 0]], np.float64)
        assert reconstruction_error(model, m) == pytest.approx(math.log(2))

    def test_batch_shape(self):
        model = exact_reconstruction_model()
        m = np.array([[[1, 0, 0, 1]], [[0, 0, 0, 0]]], np.float64).reshape(2, 1, 4)
        errs = reconstruction_error(model, m)
        assert errs.shape == (2,)


def small_defense_model(seed=0, lambda_d=2.0):
    transform = sample_lsh(12, 3, 2, seed=seed)
    return init_defense_model(transform, row_units=3, trunk_units=4, hidden_units=3,
                              lambda_d=lambda_d, noise_eps=2.0, seed=seed)


def numeric_grad(f, arr, h=1e-4):
    g = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        g[i] = (fp - fm) / (2 * h)
        it.iternext()
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


class TestJointLoss:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.model = small_defense_model(seed=3)
        # keep pre-activations away from the relu kink so central differences
        # see a locally smooth loss
        for p in self.model.parameters():
            p += rng.uniform(0.05, 0.15, p.shape) * rng.choice([-1.0, 1.0], p.shape)
        self.m_bits = rng.integers(0, 2, (5, 2, 3)).astype(np.uint8)
        self.labels = rng.integers(0, 2, 5)
        spec = self.model.noise
        self.m_noisy = inject_noise_batch(self.m_bits, spec, np.random.default_rng(9))

    def test_lambda_zero_is_pure_classification(self):
        model = small_defense_model(seed=4, lambda_d=0.0)
        loss, grads, parts = joint_loss(model, self.m_bits, self.labels)
        assert loss == pytest.approx(parts["classification"])
        assert parts["reconstruction"] == 0.0
        # decoder gradient untouched
        assert np.all(grads[-2] == 0.0) and np.all(grads[-1] == 0.0)

    def test_loss_composition(self):
        loss, _, parts = joint_loss(self.model, self.m_bits, self.labels,
                                    m_noisy=self.m_noisy)
        assert loss == pytest.approx(parts["classification"]
                                     + self.model.lambda_d * parts["reconstruction"])

    def test_all_parameter_gradients_match_finite_differences(self):
        model, m_bits, labels, m_noisy = self.model, self.m_bits, self.labels, self.m_noisy

        def loss():
            l, _, _ = joint_loss(model, m_bits, labels, m_noisy=m_noisy)
            return l

        _, grads, _ = joint_loss(model, m_bits, labels, m_noisy=m_noisy)
        assert len(grads) == len(model.parameters())
        for p, g in zip(model.parameters(), grads):
            assert rel_err(g, numeric_grad(loss, p)) < 1e-4

    def test_encoder_is_shared(self):
        before_probs, _ = classifier_forward(self.model, self.m_bits.astype(np.float64))
        before_err = reconstruction_error(self.model, self.m_bits.astype(np.float64))
        self.model.encoder.w += 0.5
        after_probs, _ = classifier_forward(self.model, self.m_bits.astype(np.float64))
        after_err = reconstruction_error(self.model, self.m_bits.astype(np.float64))
        assert not np.allclose(before_probs, after_probs)
        assert not np.allclose(before_err, after_err)

    def test_needs_noise_source(self):
        with pytest.raises(ValueError):
            joint_loss(self.model, self.m_bits, self.labels)


def toy_problem(n=24, rows=150, seed=5):
    rng = np.random.default_rng(seed)
    r0 = rng.uniform(0.05, 0.25, n)
    r1 = np.clip(r0 + rng.uniform(0.15, 0.45, n) * rng.choice([-1, 1], n), 0.01, 0.9)
    X0 = (rng.random((rows, n)) < r0).astype(np.uint8)
    X1 = (rng.random((rows, n)) < r1).astype(np.uint8)
    ds = Dataset(np.concatenate([X0, X1]), np.array([0] * rows + [1] * rows))
    Xv0 = (rng.random((40, n)) < r0).astype(np.uint8)
    Xv1 = (rng.random((40, n)) < r1).astype(np.uint8)
    valid = Dataset(np.concatenate([Xv0, Xv1]), np.array([0] * 40 + [1] * 40))
    return ds, valid


class TestTraining:
    def test_trains_and_calibrates(self):
        train, valid = toy_problem()
        transform = sample_lsh(24, 4, 6, seed=1)
        hyper = DefenseHyper(row_units=4, trunk_units=16, hidden_units=8,
                             lambda_d=1.0, noise_eps=2.0, epochs=10, batch_size=32,
                             lr=0.01, dropout_rate=0.1, pass_rate=0.95, seed=1)
        model, history = train_defense(train, valid, transform, hyper)
        assert len(history) == 10
        assert model.t_r is not None and np.isfinite(model.t_r)
        accs = [h["valid_acc"] for h in history]
        assert max(accs) >= 0.85
        preds = predict_with_rejection(model, valid.X)
        assert set(np.unique(preds)) <= {REJECTED, 0, 1}
        pass_frac = (preds != REJECTED).mean()
        assert pass_frac >= hyper.pass_rate - 2 / len(valid)

    def test_deterministic(self):
        train, valid = toy_problem(seed=6)
        transform = sample_lsh(24, 3, 4, seed=2)
        hyper = DefenseHyper(row_units=3, trunk_units=8, hidden_units=4,
                             lambda_d=0.5, noise_eps=2.0, epochs=3, batch_size=64,
                             lr=0.005, dropout_rate=0.4, seed=2)
        m1, _ = train_defense(train, valid, transform, hyper)
        m2, _ = train_defense(train, valid, transform, hyper)
        for a, b in zip(m1.parameters(), m2.parameters()):
            assert np.array_equal(a, b)
        assert m1.t_r == m2.t_r

    def test_lambda_zero_never_rejects(self):
        train, valid = toy_problem(seed=7)
        transform = sample_lsh(24, 3, 4, seed=3)
        hyper = DefenseHyper(row_units=3, trunk_units=8, hidden_units=4,
                             lambda_d=0.0, epochs=2, batch_size=64, lr=0.005,
                             dropout_rate=0.0, seed=3)
        model, _ = train_defense(train, valid, transform, hyper)
        assert model.t_r == float("inf")
        preds = predict_with_rejection(model, valid.X)
        assert REJECTED not in preds


class TestCalibration:
    def test_quantile_behavior(self):
        train, valid = toy_problem(seed=8)
        transform = sample_lsh(24, 3, 4, seed=4)
        hyper = DefenseHyper(row_units=3, trunk_units=8, hidden_units=4,
                             lambda_d=1.0, noise_eps=2.0, epochs=2, batch_size=64,
                             lr=0.005, dropout_rate=0.0, seed=4)
        model, _ = train_defense(train, valid, transform, hyper)
        errs = reconstruction_errors(model, valid.X)
        t = calibrate_threshold(model, valid, 0.9)
        assert t == pytest.approx(np.quantile(errs, 0.9))
        frac = (errs <= t).mean()
        assert abs(frac - 0.9) <= 2 / len(valid) + 1e-9
        assert calibrate_threshold(model, valid, 1.0) == pytest.approx(errs.max())

    def test_pass_rate_validation(self):
        model = exact_reconstruction_model()
        ds = Dataset(np.zeros((3, 4), np.uint8), [0, 0, 1])
        with pytest.raises(ValueError):
            calibrate_threshold(model, ds, 0.0)
        with pytest.raises(ValueError):
            calibrate_threshold(model, Dataset(np.zeros((0, 4), np.uint8), []), 0.5)

    def test_uncalibrated_predict_raises(self):
        model = small_defense_model(seed=9)
        with pytest.raises(ValueError, match="calibrate"):
            predict_with_rejection(model, np.zeros((2, 12), np.uint8))


class TestCheckpoint:
    def test_round_trip_identical_predictions(self, tmp_path):
        train, valid = toy_problem(seed=10)
        transform = sample_lsh(24, 3, 4, seed=5)
        hyper = DefenseHyper(row_units=3, trunk_units=8, hidden_units=4,
                             lambda_d=1.0, noise_eps=2.0, epochs=2, batch_size=64,
                             lr=0.005, dropout_rate=0.0, seed=5)
        model, _ = train_defense(train, valid, transform, hyper)
        p = tmp_path / "defense.jsonl"
        store_defense(model, p)
        back = load_defense(p)
        assert back.t_r == model.t_r
        assert back.lambda_d == model.lambda_d
        for a, b in zip(model.parameters(), back.parameters()):
            assert np.array_equal(a, b)
        assert np.array_equal(predict_with_rejection(model, valid.X),
                              predict_with_rejection(back, valid.X))
        assert np.array_equal(
            reconstruction_errors(model, valid.X),
            reconstruction_errors(back, valid.X))
