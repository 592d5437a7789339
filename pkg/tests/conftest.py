import numpy as np
import pytest

from tagcomplete import Hyperparams, ModelState, Problem, TagObservations, build_knn


def random_problem(rng, n=None, d=None, m=None, kappa=None, alpha=None, beta=None):
    """Small random instance: features, random partial tags, kNN graph."""
    n = n if n is not None else int(rng.integers(3, 11))
    d = d if d is not None else int(rng.integers(1, 5))
    m = m if m is not None else int(rng.integers(1, 5))
    kappa = kappa if kappa is not None else int(rng.integers(1, n))
    features = rng.normal(size=(n, d))
    signs = rng.choice([-1, 1], size=(n, m)).astype(np.int8)
    mask = rng.choice([0, 1], size=(n, m)).astype(np.uint8)
    obs = TagObservations(signs, mask)
    hp = Hyperparams(
        alpha=float(rng.uniform(0.1, 2.0)) if alpha is None else alpha,
        beta=float(rng.uniform(0.1, 2.0)) if beta is None else beta,
    )
    graph = build_knn(features, kappa)
    return Problem(features, obs, graph, hp)


def random_state(rng, problem, scale=1.0):
    return ModelState(
        rng.normal(scale=scale, size=(problem.n, problem.m)),
        rng.normal(scale=scale, size=(problem.n, problem.m, problem.d)),
    )


def stable_eta(problem):
    """Step size safely below 2/L for both block gradients."""
    coupling = 2.0 * (max(len(r) for r in problem.graph.reverse) + problem.hp.beta)
    gram_max = 0.0
    for i in range(problem.n):
        xn = problem.features[problem.graph.forward[i]]
        gram_max = max(gram_max, float(np.linalg.eigvalsh(xn.T @ xn).max()))
    ridge = 2.0 * (gram_max + problem.hp.alpha)
    return 0.9 / max(coupling, ridge)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
