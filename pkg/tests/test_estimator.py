import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tagcomplete import (
    Hyperparams,
    LocalTagCompleter,
    Problem,
    build_knn,
    run_alternating,
    synthesize,
)


@pytest.fixture(scope="module")
def small_data():
    features, obs, _ = synthesize(40, 3, 5, kappa=3, noise=0.1, seed=6)
    y = (obs.signs * obs.mask).astype(int)
    # knock out a third of the entries
    rng = np.random.default_rng(0)
    y[rng.random(y.shape) < 0.33] = 0
    return features, y


class TestSklearnApi:
    def test_get_set_params_roundtrip(self):
        est = LocalTagCompleter(kappa=7, beta=2.0)
        params = est.get_params()
        assert params["kappa"] == 7 and params["beta"] == 2.0
        est.set_params(alpha=0.5)
        assert est.get_params()["alpha"] == 0.5

    def test_clone(self, small_data):
        X, y = small_data
        est = LocalTagCompleter(kappa=3, max_iters=5).fit(X, y)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert not hasattr(cloned, "scores_")

    def test_not_fitted_errors(self):
        est = LocalTagCompleter()
        with pytest.raises(NotFittedError):
            est.predict()
        with pytest.raises(NotFittedError):
            est.decision_function()


class TestFit:
    def test_fit_shapes(self, small_data):
        X, y = small_data
        est = LocalTagCompleter(kappa=3, step="closed-form").fit(X, y)
        assert est.scores_.shape == y.shape
        assert est.predictors_.shape == (X.shape[0], y.shape[1], X.shape[1])
        assert est.n_features_in_ == X.shape[1]
        assert est.n_iter_ == len(est.trace_)
        assert est.objective_ == est.trace_.records[-1].objective

    def test_fit_transform_returns_scores(self, small_data):
        X, y = small_data
        est = LocalTagCompleter(kappa=3, step="closed-form", max_iters=20)
        scores = est.fit_transform(X, y)
        assert scores is est.scores_

    def test_predict_signs(self, small_data):
        X, y = small_data
        est = LocalTagCompleter(kappa=3, step="closed-form", max_iters=20).fit(X, y)
        predicted = est.predict()
        assert set(np.unique(predicted)) <= {-1, 1}
        np.testing.assert_array_equal(predicted, np.where(est.scores_ >= 0, 1, -1))

    def test_matches_functional_pipeline(self, small_data):
        """The estimator is a thin facade over the solver modules."""
        X, y = small_data
        est = LocalTagCompleter(kappa=3, step="closed-form").fit(X, y)
        from tagcomplete import TagObservations

        obs = TagObservations(np.where(y == 0, 1, y), (y != 0).astype(np.uint8))
        graph = build_knn(X, 3)
        problem = Problem(X, obs, graph, Hyperparams())
        state, _ = run_alternating(problem, "observed", "closed-form")
        np.testing.assert_array_equal(est.scores_, state.scores)
        np.testing.assert_array_equal(est.predictors_, state.predictors)

    def test_standardize_flag(self, small_data):
        X, y = small_data
        base = LocalTagCompleter(kappa=3, max_iters=3, standardize=True).fit(X, y)
        scaled = LocalTagCompleter(kappa=3, max_iters=3, standardize=True).fit(10.0 * X, y)
        # standardization removes per-dimension scale, so the graphs agree
        np.testing.assert_array_equal(base.graph_.forward, scaled.graph_.forward)

    def test_rejects_bad_tag_values(self, small_data):
        X, y = small_data
        bad = y.copy()
        bad[0, 0] = 3
        with pytest.raises(ValueError, match="-1, 0"):
            LocalTagCompleter(kappa=3).fit(X, bad)

    def test_rejects_fractional_tag_values(self, small_data):
        X, y = small_data
        bad = y.astype(float)
        bad[0, 0] = 0.5
        with pytest.raises(ValueError, match="-1, 0"):
            LocalTagCompleter(kappa=3).fit(X, bad)

    def test_rejects_row_mismatch(self, small_data):
        X, y = small_data
        with pytest.raises(ValueError, match="rows"):
            LocalTagCompleter(kappa=3).fit(X, y[:-1])
