"""Learnable state, the joint objective, and its two block gradients.

The objective couples an n x m score matrix with n per-neighborhood linear
predictors (each m x d):

    sum_i [ sum_{j in N_i} ||t_j - W_i x_j||^2
            + alpha * ||W_i||_F^2
            + beta * (t_i - s_i)^T diag(v_i) (t_i - s_i) ]

where s_i are the observed +/-1 signs and v_i the observation mask. Masked
entries contribute nothing anywhere. Each score row t_i and each predictor
W_i appears in its own additive terms only, so both block gradients are
coordinate-separable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TagObservations, validate_features
from .neighbors import NeighborhoodGraph

# Rows of i processed per batch in the heavy (n, m, d) operations; bounds
# peak temporary memory at scale.
CHUNK = 512


@dataclass
class Hyperparams:
    """Solver weights and schedule.

    alpha >= 0 weighs predictor complexity, beta >= 0 weighs fidelity to
    observed tags, eta > 0 is the descent step, tol > 0 the relative
    objective-decrease stopping threshold.
    """

    alpha: float = 1.0
    beta: float = 1.0
    eta: float = 1e-3
    max_iters: int = 200
    tol: float = 1e-6

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class ModelState:
    """Scores (n, m) and local predictors stacked as an (n, m, d) array."""

    scores: np.ndarray
    predictors: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.predictors = np.asarray(self.predictors, dtype=np.float64)
        if self.scores.ndim != 2 or self.predictors.ndim != 3:
            raise ValueError("scores must be (n, m) and predictors (n, m, d)")
        if self.predictors.shape[:2] != (self.scores.shape[0], self.scores.shape[1]):
            raise ValueError("predictors shape inconsistent with scores")

    def copy(self) -> "ModelState":
        return ModelState(self.scores.copy(), self.predictors.copy())

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.scores).all() and np.isfinite(self.predictors).all())


@dataclass
class Problem:
    """One tag-completion instance: features, observations, graph, weights."""

    features: np.ndarray
    obs: TagObservations
    graph: NeighborhoodGraph
    hp: Hyperparams

    def __post_init__(self):
        self.features = validate_features(self.features)
        n, d = self.features.shape
        if self.obs.n != n:
            raise ValueError(f"tag rows ({self.obs.n}) disagree with feature rows ({n})")
        if self.graph.n != n:
            raise ValueError(f"graph size ({self.graph.n}) disagrees with feature rows ({n})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return self.obs.m

    def check_state(self, state: ModelState) -> None:
        if state.scores.shape != (self.n, self.m) or state.predictors.shape != (
            self.n,
            self.m,
            self.d,
        ):
            raise ValueError(
                f"state shapes {state.scores.shape}/{state.predictors.shape} do not match "
                f"problem (n={self.n}, m={self.m}, d={self.d})"
            )


def predict_local(predictors: np.ndarray, i: int, x: np.ndarray) -> np.ndarray:
    """Apply predictor i to a single feature vector: returns W_i x, length m."""
    predictors = np.asarray(predictors, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if not 0 <= i < predictors.shape[0]:
        raise IndexError(f"predictor index {i} out of range [0, {predictors.shape[0]})")
    if x.shape != (predictors.shape[2],):
        raise ValueError(f"feature vector has shape {x.shape}, expected ({predictors.shape[2]},)")
    return predictors[i] @ x


def neighbor_predictions(state: ModelState, problem: Problem) -> np.ndarray:
    """All local predictions W_i x_j for j in N_i, shape (n, kappa, m)."""
    n, kappa = problem.graph.forward.shape
    out = np.empty((n, kappa, problem.m), dtype=np.float64)
    for start in range(0, n, CHUNK):
        stop = min(start + CHUNK, n)
        xn = problem.features[problem.graph.forward[start:stop]]  # (c, kappa, d)
        np.matmul(xn, state.predictors[start:stop].transpose(0, 2, 1), out=out[start:stop])
    return out


def objective_terms(state: ModelState, problem: Problem) -> tuple[float, float, float]:
    """The three objective totals (prediction error, alpha-weighted complexity,
    beta-weighted fidelity); their sum is the objective."""
    problem.check_state(state)
    hp = problem.hp
    pred_err = 0.0
    complexity = 0.0
    n = problem.n
    for start in range(0, n, CHUNK):
        stop = min(start + CHUNK, n)
        if problem.graph.kappa > 0:
            xn = problem.features[problem.graph.forward[start:stop]]
            preds = np.matmul(xn, state.predictors[start:stop].transpose(0, 2, 1))
            resid = state.scores[problem.graph.forward[start:stop]] - preds
            pred_err += float((resid * resid).sum())
        w = state.predictors[start:stop]
        complexity += float((w * w).sum())
    mask = problem.obs.mask.astype(np.float64)
    dev = state.scores - problem.obs.signs
    fidelity = float((mask * dev * dev).sum())
    return pred_err, hp.alpha * complexity, hp.beta * fidelity


def objective(state: ModelState, problem: Problem) -> float:
    """Joint objective value; always >= 0."""
    return sum(objective_terms(state, problem))


def _reverse_prediction_sums(state: ModelState, problem: Problem) -> np.ndarray:
    """For each i, the sum of W_k x_i over owners k with i in N_k, shape (n, m)."""
    sums = np.zeros((problem.n, problem.m), dtype=np.float64)
    if problem.graph.kappa == 0:
        return sums
    preds = neighbor_predictions(state, problem)  # (n, kappa, m)
    np.add.at(sums, problem.graph.forward.ravel(), preds.reshape(-1, problem.m))
    return sums


def grad_scores_all(state: ModelState, problem: Problem) -> np.ndarray:
    """Gradient of the objective w.r.t. every score row, shape (n, m)."""
    problem.check_state(state)
    counts = problem.graph.reverse_counts.astype(np.float64)
    coupling = 2.0 * (counts[:, None] * state.scores - _reverse_prediction_sums(state, problem))
    mask = problem.obs.mask.astype(np.float64)
    fidelity = 2.0 * problem.hp.beta * mask * (state.scores - problem.obs.signs)
    return coupling + fidelity


def grad_scores(state: ModelState, problem: Problem, i: int) -> np.ndarray:
    """Gradient w.r.t. score row i: 2 * sum_{k: i in N_k} (t_i - W_k x_i)
    plus 2 * beta * v_i (t_i - s_i)."""
    problem.check_state(state)
    if not 0 <= i < problem.n:
        raise IndexError(f"index {i} out of range [0, {problem.n})")
    owners = problem.graph.reverse[i]
    t_i = state.scores[i]
    acc = np.zeros(problem.m, dtype=np.float64)
    if owners.size:
        preds = state.predictors[owners] @ problem.features[i]  # (|owners|, m)
        acc = 2.0 * (owners.size * t_i - preds.sum(axis=0))
    v = problem.obs.mask[i].astype(np.float64)
    return acc + 2.0 * problem.hp.beta * v * (t_i - problem.obs.signs[i])


def grad_predictors_all(state: ModelState, problem: Problem) -> np.ndarray:
    """Gradient of the objective w.r.t. every predictor, shape (n, m, d)."""
    problem.check_state(state)
    grad = np.empty_like(state.predictors)
    alpha = problem.hp.alpha
    for start in range(0, problem.n, CHUNK):
        stop = min(start + CHUNK, problem.n)
        np.multiply(state.predictors[start:stop], 2.0 * alpha, out=grad[start:stop])
        if problem.graph.kappa > 0:
            fwd = problem.graph.forward[start:stop]
            xn = problem.features[fwd]  # (c, kappa, d)
            preds = np.matmul(xn, state.predictors[start:stop].transpose(0, 2, 1))
            resid = state.scores[fwd] - preds  # (c, kappa, m)
            grad[start:stop] -= 2.0 * np.matmul(resid.transpose(0, 2, 1), xn)
    return grad


def grad_predictor(state: ModelState, problem: Problem, i: int) -> np.ndarray:
    """Gradient w.r.t. predictor i: -2 * sum_{j in N_i} (t_j - W_i x_j) x_j^T
    plus 2 * alpha * W_i.

    This is the analytic gradient of the objective, validated against
    central finite differences in the test suite.
    """
    problem.check_state(state)
    if not 0 <= i < problem.n:
        raise IndexError(f"index {i} out of range [0, {problem.n})")
    grad = 2.0 * problem.hp.alpha * state.predictors[i]
    if problem.graph.kappa > 0:
        nbrs = problem.graph.forward[i]
        xn = problem.features[nbrs]  # (kappa, d)
        resid = state.scores[nbrs] - xn @ state.predictors[i].T  # (kappa, m)
        grad = grad - 2.0 * resid.T @ xn
    return grad
