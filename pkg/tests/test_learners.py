import numpy as np
import pytest

from leanglm import ConfigurationError, EstimationError, LearnerSpec, fit_learner, predict
from leanglm.learners import forest_spec, kernel_spec, predict_honest, ridge_spec


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(42)


class TestContract:
    def test_too_few_rows(self, rng):
        with pytest.raises(EstimationError):
            fit_learner(ridge_spec(penalty=1.0), rng.normal(size=(9, 2)), rng.normal(size=9))

    def test_constant_target_returns_constant_predictor(self, rng):
        X = rng.normal(size=(30, 2))
        p = fit_learner(kernel_spec(), X, np.full(30, 5.0))
        assert np.all(predict(p, rng.normal(size=(7, 2))) == 5.0)

    def test_dimension_mismatch_on_predict(self, rng):
        p = fit_learner(ridge_spec(penalty=1.0), rng.normal(size=(20, 3)), rng.normal(size=20))
        with pytest.raises(EstimationError):
            predict(p, rng.normal(size=(5, 2)))

    def test_ridge_logistic_requires_unit_interval_targets(self, rng):
        X = rng.normal(size=(20, 2))
        with pytest.raises(ConfigurationError):
            fit_learner(LearnerSpec("ridge_logistic", {"penalty": 1.0}), X, rng.normal(size=20))

    def test_nonpositive_hyperparam_rejected(self):
        with pytest.raises(ConfigurationError):
            LearnerSpec("forest", {"n_trees": 0})


class TestRidge:
    def test_vanishing_penalty_interpolates_linear_truth(self, rng):
        X = rng.normal(size=(60, 1))
        t = 2.0 * X[:, 0] + 1.0
        p = fit_learner(ridge_spec(penalty=1e-10), X, t)
        Xe = rng.normal(size=(40, 1))
        assert np.max(np.abs(predict(p, Xe) - (2.0 * Xe[:, 0] + 1.0))) < 1e-8

    def test_duplicated_rows_get_duplicated_predictions(self, rng):
        X = rng.normal(size=(25, 2))
        t = rng.normal(size=25)
        p = fit_learner(ridge_spec(penalty=0.5), X, t)
        row = rng.normal(size=(1, 2))
        stacked = np.vstack([row, row, row])
        preds = predict(p, stacked)
        assert preds[0] == preds[1] == preds[2]

    def test_cv_selects_strong_smoothing_on_pure_noise(self, rng):
        X = rng.normal(size=(80, 3))
        t = rng.normal(size=80)
        p = fit_learner(ridge_spec(penalty="cv", seed=3), X, t)
        lam = float(p.summary.split("lambda=")[1].rstrip(")"))
        assert lam > 1.0  # top of the grid once nothing is predictable

    def test_ridge_logistic_recovers_probabilities(self, rng):
        X = rng.normal(size=(400, 2))
        prob = 1.0 / (1.0 + np.exp(-(0.8 * X[:, 0] - 0.5 * X[:, 1])))
        t = (rng.random(400) < prob).astype(float)
        p = fit_learner(LearnerSpec("ridge_logistic", {"penalty": 1e-4}), X, t)
        pred = predict(p, X)
        assert np.all((pred >= 0) & (pred <= 1))
        assert np.corrcoef(pred, prob)[0, 1] > 0.9


class TestKernel:
    def test_constant_like_smooth_recovery(self, rng):
        X = rng.uniform(-2, 2, size=(400, 1))
        t = np.sin(X[:, 0])
        p = fit_learner(kernel_spec(seed=1), X, t)
        Xe = rng.uniform(-1.5, 1.5, size=(200, 1))
        rmse = np.sqrt(np.mean((predict(p, Xe) - np.sin(Xe[:, 0])) ** 2))
        assert rmse < 0.05

    def test_predictions_are_convex_combinations(self, rng):
        X = rng.normal(size=(100, 2))
        t = rng.normal(size=100)
        p = fit_learner(kernel_spec(bandwidth=0.3), X, t)
        pred = predict(p, rng.normal(size=(500, 2)) * 3)
        assert pred.min() >= t.min() - 1e-12
        assert pred.max() <= t.max() + 1e-12

    def test_leave_one_out_differs_from_in_sample(self, rng):
        X = rng.normal(size=(60, 1))
        t = rng.normal(size=60)
        p = fit_learner(kernel_spec(bandwidth=0.2), X, t)
        in_sample = predict(p, X)
        loo = predict_honest(p, X)
        # removing the own observation must reduce apparent fit
        assert np.mean((loo - t) ** 2) > np.mean((in_sample - t) ** 2)


class TestForest:
    def test_out_of_sample_rmse_on_quadratic(self, rng):
        X = rng.uniform(-2, 2, size=(2000, 1))
        t = X[:, 0] ** 2
        p = fit_learner(forest_spec(seed=1, n_trees=500), X, t)
        Xe = rng.uniform(-2, 2, size=(4000, 1))
        rmse = np.sqrt(np.mean((predict(p, Xe) - Xe[:, 0] ** 2) ** 2))
        assert rmse < 0.15

    def test_near_interpolation_with_full_sample_unit_leaves(self, rng):
        X = rng.normal(size=(300, 3))
        t = rng.normal(size=300)
        p = fit_learner(
            forest_spec(seed=2, n_trees=60, bootstrap_fraction=1.0, min_leaf=1, mtry=3), X, t
        )
        rmse = np.sqrt(np.mean((predict(p, X) - t) ** 2))
        assert rmse < 0.05 * np.std(t)

    def test_bit_identical_given_seed(self, rng):
        X = rng.normal(size=(400, 5))
        t = rng.normal(size=400)
        a = fit_learner(forest_spec(seed=9, n_trees=40), X, t)
        b = fit_learner(forest_spec(seed=9, n_trees=40), X, t)
        assert all(np.array_equal(u, v) for u, v in zip(a.state, b.state))
        Xe = rng.normal(size=(50, 5))
        assert np.array_equal(predict(a, Xe), predict(b, Xe))

    def test_seed_changes_predictions(self, rng):
        X = rng.normal(size=(400, 5))
        t = X[:, 0] + rng.normal(size=400)
        a = fit_learner(forest_spec(seed=1, n_trees=20), X, t)
        b = fit_learner(forest_spec(seed=2, n_trees=20), X, t)
        Xe = rng.normal(size=(50, 5))
        assert not np.array_equal(predict(a, Xe), predict(b, Xe))

    def test_predictions_within_target_range(self, rng):
        X = rng.normal(size=(500, 4))
        t = (rng.random(500) < 0.3).astype(float)
        p = fit_learner(forest_spec(seed=3, n_trees=80), X, t)
        pred = predict(p, rng.normal(size=(1000, 4)) * 2)
        assert pred.min() >= 0.0 and pred.max() <= 1.0

    def test_oob_predictions_are_honest(self, rng):
        X = rng.normal(size=(500, 3))
        t = rng.normal(size=500)  # pure noise
        p = fit_learner(forest_spec(seed=4, n_trees=100, min_leaf=5), X, t)
        in_sample = predict(p, X)
        oob = predict_honest(p, X)
        # in-sample fit chases noise, honest predictions should not
        assert abs(np.corrcoef(in_sample, t)[0, 1]) > 0.5
        assert abs(np.corrcoef(oob, t)[0, 1]) < 0.2

    def test_exact_cell_means_on_discrete_data(self, exact_forest_spec):
        rng = np.random.default_rng(5)
        a = rng.integers(0, 2, size=240).astype(float)
        l = rng.integers(0, 3, size=240).astype(float)
        t = rng.normal(size=240)
        X = np.column_stack([a, l])
        p = fit_learner(exact_forest_spec, X, t)
        pred = predict(p, X)
        for av in (0.0, 1.0):
            for lv in (0.0, 1.0, 2.0):
                cell = (a == av) & (l == lv)
                assert pred[cell] == pytest.approx(t[cell].mean(), abs=1e-12)
