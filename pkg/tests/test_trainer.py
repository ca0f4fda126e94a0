import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from decoremoval.errors import ConvergenceError, InputError
from decoremoval.trainer import (LinearModel, TrainConfig, loss_gradient, loss_hessian,
                                 minimize_perturbed, model_gradient_norm, per_sample_gradients,
                                 perturbed_loss, sample_perturbation, signed_labels,
                                 train_classifier)


def instance(seed, n=None, d=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 200))
    d = d or int(rng.integers(1, 20))
    Z = rng.standard_normal((n, d))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    s = rng.uniform(0.2, 2.0, n)
    return rng, Z, y, s


class TestPerturbation:
    def test_zero_std(self):
        assert np.array_equal(sample_perturbation(7, 0.0, 3), np.zeros(7))

    def test_variance(self):
        assert 0.95 <= np.var(sample_perturbation(10000, 1.0, 0)) <= 1.05

    def test_deterministic(self):
        assert np.array_equal(sample_perturbation(5, 1.0, 9), sample_perturbation(5, 1.0, 9))


class TestLoss:
    def test_origin_value(self):
        Z = np.random.default_rng(0).standard_normal((6, 3))
        y = np.array([1, -1, 1, 1, -1, -1.0])
        assert perturbed_loss(np.zeros(3), Z, y, None, np.zeros(3), 0.7) == pytest.approx(
            6 * math.log(2), rel=1e-14)
        assert perturbed_loss(np.zeros(3), Z, y, None, np.ones(3), 0.7) == pytest.approx(
            6 * math.log(2), rel=1e-14)

    def test_linear_in_b(self):
        w = np.array([0.3, -1.2])
        z, y = np.array([[1.0, 2.0]]), np.array([1.0])
        db = np.array([0.5, -0.25])
        base = perturbed_loss(w, z, y, None, np.zeros(2), 1.0)
        moved = perturbed_loss(w, z, y, None, db, 1.0)
        assert moved - base == pytest.approx(float(db @ w), abs=1e-14)

    def test_gradient_example(self):
        g = loss_gradient(np.zeros(2), [[1.0, 0.0]], [1.0], [1.0], np.zeros(2), 0.0)
        np.testing.assert_array_equal(g, [-0.5, 0.0])

    def test_hessian_example(self):
        H = loss_hessian(np.zeros(2), [[1.0, 0.0]], [1.0], [1.0], 0.1)
        np.testing.assert_allclose(H, [[0.35, 0.0], [0.0, 0.1]], atol=1e-16)

    def test_empty_hessian_is_ridge(self):
        H = loss_hessian(np.ones(3), np.zeros((0, 3)), np.zeros(0), np.zeros(0), 0.4)
        np.testing.assert_array_equal(H, 0.4 * np.eye(3))

    def test_rejects_bad_labels(self):
        with pytest.raises(InputError):
            loss_gradient(np.zeros(1), [[1.0]], [0.0], None, np.zeros(1), 1.0)

    @pytest.mark.parametrize("loss", ["logistic", "ridge"])
    @pytest.mark.parametrize("seed", range(100))
    def test_finite_differences(self, seed, loss):
        rng, Z, y, s = instance(seed, n=int(8 + seed % 30), d=int(2 + seed % 5))
        d = Z.shape[1]
        w, b, lam = rng.standard_normal(d), rng.standard_normal(d), 0.3
        g = loss_gradient(w, Z, y, s, b, lam, loss)
        H = loss_hessian(w, Z, y, s, lam, loss)
        h = 1e-5
        I = np.eye(d)
        g_fd = np.array([(perturbed_loss(w + h * e, Z, y, s, b, lam, loss)
                          - perturbed_loss(w - h * e, Z, y, s, b, lam, loss)) / (2 * h) for e in I])
        H_fd = np.array([(loss_gradient(w + h * e, Z, y, s, b, lam, loss)
                          - loss_gradient(w - h * e, Z, y, s, b, lam, loss)) / (2 * h) for e in I])
        scale_g = max(1.0, np.abs(g).max())
        scale_h = max(1.0, np.abs(H).max())
        assert np.abs(g - g_fd).max() <= 1e-6 * scale_g
        assert np.abs(H - H_fd).max() <= 1e-5 * scale_h

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_strong_convexity(self, seed):
        rng, Z, y, s = instance(seed)
        lam = float(rng.uniform(0.01, 5))
        H = loss_hessian(rng.standard_normal(Z.shape[1]), Z, y, s, lam)
        assert np.linalg.eigvalsh(H).min() >= lam - 1e-10

    def test_per_sample_gradients_sum(self):
        rng, Z, y, s = instance(1, n=20, d=4)
        w = rng.standard_normal(4)
        G = per_sample_gradients(w, Z, y)
        total = loss_gradient(w, Z, y, s, np.zeros(4), 0.0)
        np.testing.assert_allclose(s @ G, total, rtol=1e-12, atol=1e-13)


class TestTraining:
    def test_two_point_separable(self):
        Z = np.array([[1.0, 0.5], [-1.0, -0.5]])
        cfg = TrainConfig(perturb_std=0.0)
        m = train_classifier(Z, [1, 0], None, cfg, lam=1.0)
        assert model_gradient_norm(m, Z, [1, 0], None) <= 1e-8
        assert list(m.predict(Z)) == [1, 0]

    def test_deterministic(self):
        rng, Z, y, _ = instance(2, n=80, d=5)
        labels = (y > 0).astype(int)
        a = train_classifier(Z, labels, None, TrainConfig(seed=5), lam=1.0)
        b = train_classifier(Z, labels, None, TrainConfig(seed=5), lam=1.0)
        assert np.array_equal(a.w_clf, b.w_clf) and np.array_equal(a.b_perturb, b.b_perturb)

    def test_perturbed_optimum_identity(self):
        rng, Z, y, s = instance(3, n=120, d=6)
        labels = (y > 0).astype(int)
        m = train_classifier(Z, labels, s, TrainConfig(seed=1), lam=2.0)
        grad_orig = loss_gradient(m.w_clf[0], Z, y, s, np.zeros(6), 2.0)
        np.testing.assert_allclose(grad_orig, -m.b_perturb[0], atol=1e-8)

    def test_cached_inverse(self):
        rng, Z, y, s = instance(4, n=60, d=4)
        labels = (y > 0).astype(int)
        m = train_classifier(Z, labels, s, TrainConfig(), lam=1.0)
        H = loss_hessian(m.w_clf[0], Z, y, s, 1.0)
        np.testing.assert_allclose(m.hessian_inv[0] @ H, np.eye(4), atol=1e-10)

    def test_one_vs_rest(self):
        rng = np.random.default_rng(5)
        centers = np.array([[3, 0], [-3, 0], [0, 3.0]])
        labels = np.repeat([0, 1, 2], 30)
        Z = np.hstack([centers[labels] + 0.3 * rng.standard_normal((90, 2)), np.ones((90, 1))])
        m = train_classifier(Z, labels, None, TrainConfig(perturb_std=0.1), lam=0.5)
        assert m.w_clf.shape == (3, 3)
        assert np.mean(m.predict(Z) == labels) == 1.0
        assert model_gradient_norm(m, Z, labels, None) <= 1e-8

    def test_zero_lambda_rejected(self):
        with pytest.raises(InputError):
            train_classifier(np.eye(2), [0, 1], None, TrainConfig(), lam=0.0)

    def test_nonconvergence_reports_gradient(self):
        rng, Z, y, _ = instance(6, n=100, d=5)
        with pytest.raises(ConvergenceError) as info:
            minimize_perturbed(Z, y, None, np.ones(5) * 50, 1e-3, TrainConfig(max_iters=1))
        assert info.value.grad_norm > 1e-8

    def test_unknown_label(self):
        with pytest.raises(InputError):
            signed_labels([0, 3], (0, 1), 0)

    def test_model_validation(self):
        with pytest.raises(InputError):
            LinearModel(np.zeros((1, 2)), 1.0, np.zeros((1, 3)))
        with pytest.raises(InputError):
            LinearModel(np.zeros((1, 2)), -1.0, np.zeros((1, 2)))
