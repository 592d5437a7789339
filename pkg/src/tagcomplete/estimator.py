"""Scikit-learn style estimator wrapping the alternating solver.

The model is transductive: it completes the tag matrix of the images it is
fitted on. ``fit_transform`` returns the completed score matrix; there is
no out-of-sample prediction.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .data import TagObservations, standardize_features
from .neighbors import build_knn
from .objective import Hyperparams, Problem
from .solver import run_alternating


class LocalTagCompleter(BaseEstimator):
    """Complete missing image tags by joint local linear learning.

    Learns a real-valued score for every (image, tag) pair together with a
    per-neighborhood linear map from features to scores, by alternating
    gradient (or exact coordinate) sweeps on a single regularized
    least-squares objective.

    Parameters
    ----------
    kappa : int, default=5
        Neighborhood size of the exact kNN graph.
    alpha : float, default=1.0
        Predictor complexity (ridge) weight.
    beta : float, default=1.0
        Fidelity weight tying scores to observed tags.
    eta : float, default=1e-3
        Descent step for the gradient step modes.
    tol : float, default=1e-6
        Relative objective-decrease stopping threshold.
    max_iters : int, default=200
        Maximum alternating iterations.
    init : {'zeros', 'observed', 'ridge-warm'}, default='observed'
        Starting state.
    step : {'fixed-eta', 'backtracking', 'closed-form'}, default='backtracking'
        Sweep update rule.
    order : {'jacobi', 'gauss-seidel'}, default='jacobi'
        Within-sweep application order (numerically equivalent; jacobi is
        the vectorized path).
    include_self : bool, default=False
        Whether a point may appear in its own neighborhood.
    standardize : bool, default=False
        Standardize features per dimension before building the graph.

    Attributes
    ----------
    scores_ : ndarray of shape (n_images, n_tags)
        Completed tag scores.
    predictors_ : ndarray of shape (n_images, n_tags, n_features)
        Learned local linear maps.
    graph_ : NeighborhoodGraph
        The kNN graph used.
    trace_ : IterationTrace
        Per-iteration objective record.
    n_iter_ : int
        Iterations performed.
    objective_ : float
        Final objective value.

    Examples
    --------
    >>> import numpy as np
    >>> from tagcomplete import LocalTagCompleter
    >>> X = np.random.default_rng(0).normal(size=(30, 4))
    >>> y = np.sign(X @ np.random.default_rng(1).normal(size=(4, 6)))
    >>> y[np.random.default_rng(2).random(y.shape) < 0.4] = 0  # missing
    >>> scores = LocalTagCompleter(kappa=3).fit_transform(X, y)
    >>> scores.shape
    (30, 6)
    """

    def __init__(
        self,
        kappa=5,
        alpha=1.0,
        beta=1.0,
        eta=1e-3,
        tol=1e-6,
        max_iters=200,
        init="observed",
        step="backtracking",
        order="jacobi",
        include_self=False,
        standardize=False,
    ):
        self.kappa = kappa
        self.alpha = alpha
        self.beta = beta
        self.eta = eta
        self.tol = tol
        self.max_iters = max_iters
        self.init = init
        self.step = step
        self.order = order
        self.include_self = include_self
        self.standardize = standardize

    def _validate_tags(self, y, n_samples):
        y = check_array(y, dtype=np.float64, ensure_2d=True)
        if y.shape[0] != n_samples:
            raise ValueError(f"X has {n_samples} rows but y has {y.shape[0]}")
        if not np.isin(y, (-1.0, 0.0, 1.0)).all():
            raise ValueError("y entries must be -1, 0 (missing) or +1")
        signs = np.where(y == 0, 1, y).astype(np.int8)
        mask = (y != 0).astype(np.uint8)
        return TagObservations(signs, mask)

    def fit(self, X, y):
        """Fit on features X (n_images, n_features) and partial tags y
        (n_images, n_tags) with entries -1/+1 and 0 marking missing.

        Returns self; the completed scores are in ``scores_``.
        """
        X = check_array(X, dtype=np.float64)
        obs = self._validate_tags(y, X.shape[0])
        features = standardize_features(X) if self.standardize else X
        graph = build_knn(features, self.kappa, self.include_self)
        hp = Hyperparams(
            alpha=self.alpha,
            beta=self.beta,
            eta=self.eta,
            max_iters=self.max_iters,
            tol=self.tol,
        )
        problem = Problem(features, obs, graph, hp)
        state, trace = run_alternating(problem, self.init, self.step, self.order)
        self.scores_ = state.scores
        self.predictors_ = state.predictors
        self.graph_ = graph
        self.trace_ = trace
        self.n_iter_ = len(trace)
        self.objective_ = trace.records[-1].objective
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y):
        """Fit and return the completed score matrix (n_images, n_tags)."""
        return self.fit(X, y).scores_

    def decision_function(self):
        """Completed tag scores of the fitted images."""
        check_is_fitted(self, "scores_")
        return self.scores_

    def predict(self):
        """Completed hard tag assignments (+1/-1) of the fitted images."""
        check_is_fitted(self, "scores_")
        return np.where(self.scores_ >= 0.0, 1, -1).astype(np.int8)
