import math

import numpy as np
import pytest
from scipy.special import expit

from conftest import random_logistic, random_tabular
from sqb.model import (
    DenseLimitError,
    LogisticInstance,
    Objective,
    TabularModel,
    full_gradient,
    full_hessian,
    log_partition_value,
    objective_value,
    partition_value,
    predict_error,
)


def direct_partition(model, j, theta):
    # unshifted sum; fine for the moderate entries used here
    F = model.features(j)
    h = model.measures(j)
    return float(np.sum(h * np.exp(F @ theta)))


def fd_gradient(f, theta, h=1e-5):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def fd_jacobian(g, theta, h=1e-5):
    cols = []
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        cols.append((g(theta + e) - g(theta - e)) / (2 * h))
    return np.array(cols).T


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


class TestPartition:
    def test_zero_theta(self):
        m = LogisticInstance(np.array([[1.0, 0.0]]), [1])
        assert partition_value(m, 0, np.zeros(2)) == 2.0

    def test_unit_theta(self):
        m = LogisticInstance(np.array([[1.0, 0.0]]), [1])
        assert partition_value(m, 0, np.array([1.0, 0.0])) == pytest.approx(1 + math.e, rel=1e-14)

    def test_large_margin_is_log_representable(self):
        m = LogisticInstance(np.array([[1000.0, 0.0]]), [1])
        lz = log_partition_value(m, 0, np.array([1.0, 0.0]))
        # log(1 + e^1000) = 1000 + log1p(e^-1000)
        assert lz == pytest.approx(1000.0, rel=1e-15)
        assert np.isfinite(lz)

    def test_matches_direct_sum(self, rng):
        m = random_tabular(rng, 30, 5, zero_measures=True)
        for j in range(m.num_examples):
            theta = rng.uniform(-1, 1, 5)
            assert partition_value(m, j, theta) == pytest.approx(direct_partition(m, j, theta), rel=1e-12)

    def test_normalization(self, rng):
        m = random_tabular(rng, 40, 6)
        for j in range(m.num_examples):
            theta = rng.uniform(-3, 3, 6)
            F, h = m.features(j), m.measures(j)
            total = np.sum(np.exp(F @ theta + np.log(h) - log_partition_value(m, j, theta)))
            assert abs(total - 1.0) <= 1e-12

    def test_dimension_mismatch(self, single):
        with pytest.raises(ValueError):
            partition_value(single, 0, np.zeros(3))


class TestObjective:
    def test_log2_at_origin(self, single):
        assert objective_value(Objective(single, 0.0), np.zeros(2)) == pytest.approx(math.log(2), rel=1e-15)

    def test_regularized_value(self, single):
        # log(1+e) - 1 + (2/2) * ||[1,1]||^2
        val = objective_value(Objective(single, 2.0), np.ones(2))
        assert val == pytest.approx(math.log(1 + math.e) - 1 + 2, rel=1e-14)
        assert val == pytest.approx(2.31326, abs=5e-6)

    def test_regularizer_vanishes_at_origin(self, rng):
        m = random_tabular(rng, 25, 4)
        expect = np.mean([math.log(direct_partition(m, j, np.zeros(4))) for j in range(25)])
        for eta in (0.0, 0.3, 7.0):
            assert objective_value(Objective(m, eta), np.zeros(4)) == pytest.approx(expect, rel=1e-13)

    def test_negative_eta(self, single):
        with pytest.raises(ValueError):
            Objective(single, -1.0)

    def test_logistic_matches_generic_path(self, rng):
        lg = random_logistic(rng, 50, 6)
        tab = TabularModel([lg.features(j) for j in range(50)], lg.labels())
        theta = rng.standard_normal(6)
        a, b = Objective(lg, 0.1), Objective(tab, 0.1)
        assert a.value(theta) == pytest.approx(b.value(theta), rel=1e-13)
        np.testing.assert_allclose(a.gradient(theta), b.gradient(theta), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(a.hessian(theta), b.hessian(theta), rtol=1e-12, atol=1e-14)


class TestGradient:
    def test_single_example(self, single):
        np.testing.assert_allclose(full_gradient(Objective(single, 0.0), np.zeros(2)), [-0.5, 0.0])

    def test_label_zero(self):
        m = LogisticInstance(np.array([[2.0]]), [0])
        np.testing.assert_allclose(full_gradient(Objective(m, 1.0), np.zeros(1)), [1.0])

    @pytest.mark.parametrize("seed", range(12))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        if seed % 2:
            m = random_tabular(rng, 15, 5, zero_measures=True)
        else:
            m = random_logistic(rng, 40, 5)
        obj = Objective(m, rng.uniform(0, 1))
        theta = rng.uniform(-1, 1, 5)
        assert rel_err(full_gradient(obj, theta), fd_gradient(obj.value, theta)) <= 1e-6


class TestHessian:
    def test_bernoulli_variance(self, single):
        np.testing.assert_allclose(full_hessian(Objective(single, 0.0), np.zeros(2)), [[0.25, 0], [0, 0]])

    def test_zero_features_give_identity(self):
        m = LogisticInstance(np.zeros((1, 3)), [0])
        np.testing.assert_allclose(full_hessian(Objective(m, 1.0), np.ones(3)), np.eye(3))

    @pytest.mark.parametrize("seed", range(6))
    def test_finite_differences_and_spectrum(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = random_tabular(rng, 10, 6) if seed % 2 else random_logistic(rng, 30, 6)
        eta = rng.uniform(0, 0.5)
        obj = Objective(m, eta)
        theta = rng.uniform(-1, 1, 6)
        H = full_hessian(obj, theta)
        assert rel_err(H, fd_jacobian(obj.gradient, theta)) <= 1e-5
        np.testing.assert_allclose(H, H.T)
        assert np.linalg.eigvalsh(H).min() >= eta - 1e-10

    def test_dense_limit(self):
        m = LogisticInstance(np.zeros((1, 2001)), [0])
        with pytest.raises(DenseLimitError):
            full_hessian(Objective(m, 0.0), np.zeros(2001))


def test_convexity_certificate(rng):
    for _ in range(20):
        m = random_tabular(rng, 8, 4)
        obj = Objective(m, rng.uniform(0, 1))
        a, b = rng.uniform(-3, 3, 4), rng.uniform(-3, 3, 4)
        assert obj.value(b) >= obj.value(a) + (b - a) @ obj.gradient(a) - 1e-10


class TestPredictError:
    def test_all_ties_predict_one(self):
        m = LogisticInstance(np.eye(4), [0, 1, 0, 1])
        assert predict_error(np.zeros(4), m) == 0.5

    def test_majority_error_for_constant_predictor(self):
        # empty rows tie at p = 0.5 and are predicted 1; 3 of 4 labels are 0
        m = LogisticInstance(np.zeros((4, 2)), [0, 0, 0, 1])
        assert predict_error(np.zeros(2), m) == 0.75

    def test_separable_and_flipped(self):
        X = np.array([[1.0, 2.0], [2.0, 1.0], [-1.0, -2.0], [-2.0, -0.5]])
        theta = 100.0 * np.array([1.0, 1.0])
        assert predict_error(theta, LogisticInstance(X, [1, 1, 0, 0])) == 0.0
        assert predict_error(theta, LogisticInstance(X, [0, 0, 1, 1])) == 1.0

    def test_empty(self):
        with pytest.raises(ValueError):
            predict_error(np.zeros(2), None)

    def test_generic_tie_rule_matches_logistic(self):
        m = TabularModel([np.array([[0.0], [1.0]])], [1])
        assert predict_error(np.zeros(1), m) == 0.0


class TestValidation:
    def test_bad_labels(self):
        with pytest.raises(ValueError):
            LogisticInstance(np.eye(2), [0, 2])

    def test_negative_measure(self):
        with pytest.raises(ValueError):
            TabularModel([np.eye(2)], [0], [np.array([1.0, -1.0])])

    def test_all_zero_measure(self):
        with pytest.raises(ValueError):
            TabularModel([np.eye(2)], [0], [np.zeros(2)])

    def test_feature_dimension(self):
        with pytest.raises(ValueError):
            TabularModel([np.eye(2), np.eye(3)], [0, 0])

    def test_lipschitz_constant(self):
        X = np.array([[2.0, 0.0], [0.0, 1.0], [np.sqrt(2), np.sqrt(2)]])
        m = LogisticInstance(X, [0, 1, 0])
        assert m.lipschitz_constant(0.1) == pytest.approx(1.1)

    def test_sigmoid_probability(self, rng):
        m = random_logistic(rng, 5, 3)
        theta = rng.standard_normal(3)
        for j in range(5):
            x = m.X[j].toarray().ravel()
            assert m.probabilities(j, theta)[1] == pytest.approx(expit(x @ theta), rel=1e-14)
