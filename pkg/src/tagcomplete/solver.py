"""Alternating minimization: score sweeps and predictor sweeps until the
objective stabilizes.

Each outer iteration updates all score rows (predictors fixed), then all
predictors (scores fixed). Because the objective has no cross terms within
a block, per-row updates inside a sweep are mutually independent; the
``order`` flag only selects whether a sweep is applied batch-wise from the
sweep-start state ("jacobi") or sequentially in ascending index
("gauss-seidel"), which changes nothing but float summation order.

Step modes:

- ``fixed-eta``: plain gradient steps with hp.eta; fails loudly on
  divergence rather than shrinking the step.
- ``backtracking``: per half-sweep, halve the step (at most 30 times)
  until the sweep does not increase the objective; the robust default.
- ``closed-form``: exact coordinate minimizers for both blocks; the
  objective is non-increasing every half-sweep.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .objective import (
    CHUNK,
    ModelState,
    Problem,
    _reverse_prediction_sums,
    grad_predictor,
    grad_predictors_all,
    grad_scores,
    grad_scores_all,
    objective,
    objective_terms,
)

INIT_MODES = ("zeros", "observed", "ridge-warm")
STEP_MODES = ("fixed-eta", "backtracking", "closed-form")
ORDERS = ("jacobi", "gauss-seidel")

_MAX_HALVINGS = 30

_CKPT_MAGIC = b"TAGC"
_CKPT_VERSION = 1


class DivergenceError(RuntimeError):
    """The iteration produced non-finite values or a runaway objective."""


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    pred_term: float
    complexity_term: float
    fidelity_term: float
    max_delta: float
    seconds: float


@dataclass
class IterationTrace:
    """Per-iteration objective decomposition and update magnitudes.

    ``seconds`` is wall time elapsed since the start of the run when the
    iteration finished.
    """

    records: list = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records], dtype=np.float64)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iter,objective,term1,term2,term3,max_delta,seconds\n")
            for r in self.records:
                fh.write(
                    f"{r.iteration},{r.objective!r},{r.pred_term!r},{r.complexity_term!r},"
                    f"{r.fidelity_term!r},{r.max_delta!r},{r.seconds!r}\n"
                )


def init_state(problem: Problem, mode: str = "observed") -> ModelState:
    """Build a starting state.

    ``zeros``: all-zero scores and predictors. ``observed``: scores copy the
    observed signs (masked entries 0), predictors zero. ``ridge-warm``:
    scores as in ``observed``, predictors set to their closed-form
    minimizers given those scores.
    """
    if mode not in INIT_MODES:
        raise ValueError(f"unknown init mode {mode!r}, expected one of {INIT_MODES}")
    scores = np.zeros((problem.n, problem.m), dtype=np.float64)
    predictors = np.zeros((problem.n, problem.m, problem.d), dtype=np.float64)
    if mode in ("observed", "ridge-warm"):
        scores[:] = problem.obs.mask * problem.obs.signs.astype(np.float64)
    state = ModelState(scores, predictors)
    if mode == "ridge-warm":
        state = ModelState(scores, _closed_form_predictors_all(state, problem))
    return state


# ---------------------------------------------------------------------------
# Gradient sweeps


def _gradient_sweep_scores(state: ModelState, problem: Problem, eta: float, order: str) -> np.ndarray:
    if order == "jacobi":
        return state.scores - eta * grad_scores_all(state, problem)
    new = ModelState(state.scores.copy(), state.predictors)
    for i in range(problem.n):
        new.scores[i] -= eta * grad_scores(new, problem, i)
    return new.scores


def _gradient_sweep_predictors(
    state: ModelState, problem: Problem, eta: float, order: str
) -> np.ndarray:
    if order == "jacobi":
        return state.predictors - eta * grad_predictors_all(state, problem)
    new = ModelState(state.scores, state.predictors.copy())
    for i in range(problem.n):
        new.predictors[i] -= eta * grad_predictor(new, problem, i)
    return new.predictors


def step_scores(
    state: ModelState, problem: Problem, eta: float | None = None, order: str = "jacobi"
) -> ModelState:
    """One gradient sweep over all score rows, from the sweep-start state."""
    _check_order(order)
    eta = problem.hp.eta if eta is None else eta
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite handled below
        scores = _gradient_sweep_scores(state, problem, eta, order)
    if not np.isfinite(scores).all():
        raise DivergenceError("non-finite score update (eta too large)")
    return ModelState(scores, state.predictors)


def step_predictors(
    state: ModelState, problem: Problem, eta: float | None = None, order: str = "jacobi"
) -> ModelState:
    """One gradient sweep over all predictors, from the sweep-start state."""
    _check_order(order)
    eta = problem.hp.eta if eta is None else eta
    with np.errstate(over="ignore", invalid="ignore"):
        predictors = _gradient_sweep_predictors(state, problem, eta, order)
    if not np.isfinite(predictors).all():
        raise DivergenceError("non-finite predictor update (eta too large)")
    return ModelState(state.scores, predictors)


def _check_order(order: str) -> None:
    if order not in ORDERS:
        raise ValueError(f"unknown order {order!r}, expected one of {ORDERS}")


# ---------------------------------------------------------------------------
# Closed-form coordinate minimizers


def closed_form_scores(state: ModelState, problem: Problem, i: int) -> np.ndarray:
    """Exact minimizer of the objective in score row i, all else fixed.

    Coordinate j solves (c_i + beta*v_ij) t_ij = sum_k (W_k x_i)_j
    + beta*v_ij*s_ij over the owners k whose neighborhoods contain i.
    Coordinates with a zero denominator are unconstrained and keep their
    current value.
    """
    problem.check_state(state)
    if not 0 <= i < problem.n:
        raise IndexError(f"index {i} out of range [0, {problem.n})")
    owners = problem.graph.reverse[i]
    beta = problem.hp.beta
    pred_sum = np.zeros(problem.m, dtype=np.float64)
    if owners.size:
        pred_sum = (state.predictors[owners] @ problem.features[i]).sum(axis=0)
    v = problem.obs.mask[i].astype(np.float64)
    denom = owners.size + beta * v
    numer = pred_sum + beta * v * problem.obs.signs[i]
    return np.where(denom > 0.0, numer / np.where(denom > 0.0, denom, 1.0), state.scores[i])


def closed_form_predictor(state: ModelState, problem: Problem, i: int) -> np.ndarray:
    """Exact (ridge) minimizer of the objective in predictor i, all else fixed.

    Solves W (X X^T + alpha I) = T X^T where X stacks neighbor features and
    T their current scores as columns. Raises ``numpy.linalg.LinAlgError``
    when alpha = 0 and the neighbor Gram matrix is singular.
    """
    problem.check_state(state)
    if not 0 <= i < problem.n:
        raise IndexError(f"index {i} out of range [0, {problem.n})")
    alpha = problem.hp.alpha
    if problem.graph.kappa == 0:
        if alpha > 0:
            return np.zeros((problem.m, problem.d), dtype=np.float64)
        return state.predictors[i].copy()
    nbrs = problem.graph.forward[i]
    xn = problem.features[nbrs]  # (kappa, d)
    gram = xn.T @ xn + alpha * np.eye(problem.d)
    rhs = xn.T @ state.scores[nbrs]  # (d, m)
    return np.linalg.solve(gram, rhs).T


def _closed_form_scores_all(state: ModelState, problem: Problem) -> np.ndarray:
    counts = problem.graph.reverse_counts.astype(np.float64)
    beta = problem.hp.beta
    v = problem.obs.mask.astype(np.float64)
    denom = counts[:, None] + beta * v
    numer = _reverse_prediction_sums(state, problem) + beta * v * problem.obs.signs
    return np.where(denom > 0.0, numer / np.where(denom > 0.0, denom, 1.0), state.scores)


def _closed_form_predictors_all(state: ModelState, problem: Problem) -> np.ndarray:
    alpha = problem.hp.alpha
    kappa = problem.graph.kappa
    if kappa == 0:
        if alpha > 0:
            return np.zeros_like(state.predictors)
        return state.predictors.copy()
    out = np.empty_like(state.predictors)
    # For alpha > 0 the ridge solution T X^T (X X^T + aI_d)^-1 equals
    # T (X^T X + aI_k)^-1 X^T, so solve in whichever space is smaller.
    dual = alpha > 0 and kappa < problem.d
    eye = alpha * np.eye(kappa if dual else problem.d)
    for start in range(0, problem.n, CHUNK):
        stop = min(start + CHUNK, problem.n)
        fwd = problem.graph.forward[start:stop]
        xn = problem.features[fwd]  # (c, kappa, d)
        tn = state.scores[fwd]  # (c, kappa, m)
        if dual:
            gram = np.matmul(xn, xn.transpose(0, 2, 1)) + eye  # (c, kappa, kappa)
            z = np.linalg.solve(gram, xn)  # (c, kappa, d)
            for c in range(stop - start):
                # BLAS write straight into the output; avoids a large temporary
                np.dot(tn[c].T, z[c], out=out[start + c])
        else:
            xt = xn.transpose(0, 2, 1)
            gram = np.matmul(xt, xn) + eye
            rhs = np.matmul(xt, tn)  # (c, d, m)
            out[start:stop] = np.linalg.solve(gram, rhs).transpose(0, 2, 1)
    return out


def _closed_form_sweep(state: ModelState, problem: Problem, block: str, order: str) -> ModelState:
    if order == "jacobi":
        if block == "scores":
            return ModelState(_closed_form_scores_all(state, problem), state.predictors)
        return ModelState(state.scores, _closed_form_predictors_all(state, problem))
    if block == "scores":
        new = ModelState(state.scores.copy(), state.predictors)
        for i in range(problem.n):
            new.scores[i] = closed_form_scores(new, problem, i)
        return new
    new = ModelState(state.scores, state.predictors.copy())
    for i in range(problem.n):
        new.predictors[i] = closed_form_predictor(new, problem, i)
    return new


# ---------------------------------------------------------------------------
# Backtracking


def _backtracking_half_sweep(
    state: ModelState, problem: Problem, block: str, order: str, f_current: float
) -> tuple[ModelState, float]:
    """Try the sweep at hp.eta, halving until the objective does not increase.

    After 30 failed halvings the sweep is skipped (a zero step never
    increases the objective).
    """
    if order == "gauss-seidel":
        # Sequential sweeps recompute per-row gradients; fall back to the
        # generic path (identical values, different summation order).
        return _backtracking_half_sweep_sequential(state, problem, block, f_current)
    if block == "scores":
        direction = grad_scores_all(state, problem)
        base = state.scores
    else:
        direction = grad_predictors_all(state, problem)
        base = state.predictors
    eta = problem.hp.eta
    candidate = np.empty_like(base)
    for _ in range(_MAX_HALVINGS + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # rejected below
            np.multiply(direction, -eta, out=candidate)
            candidate += base
        if np.isfinite(candidate).all():
            if block == "scores":
                cand_state = ModelState(candidate, state.predictors)
            else:
                cand_state = ModelState(state.scores, candidate)
            f_cand = objective(cand_state, problem)
            if f_cand <= f_current:
                return cand_state, f_cand
        eta *= 0.5
    return state, f_current


def _backtracking_half_sweep_sequential(
    state: ModelState, problem: Problem, block: str, f_current: float
) -> tuple[ModelState, float]:
    eta = problem.hp.eta
    for _ in range(_MAX_HALVINGS + 1):
        if block == "scores":
            cand = ModelState(
                _gradient_sweep_scores(state, problem, eta, "gauss-seidel"), state.predictors
            )
            finite = np.isfinite(cand.scores).all()
        else:
            cand = ModelState(
                state.scores, _gradient_sweep_predictors(state, problem, eta, "gauss-seidel")
            )
            finite = np.isfinite(cand.predictors).all()
        if finite:
            f_cand = objective(cand, problem)
            if f_cand <= f_current:
                return cand, f_cand
        eta *= 0.5
    return state, f_current


# ---------------------------------------------------------------------------
# Full run


def _max_abs_diff(new: np.ndarray, old: np.ndarray) -> float:
    # chunked so no full-size temporary is allocated at scale
    if new is old:
        return 0.0
    worst = 0.0
    for start in range(0, new.shape[0], CHUNK):
        stop = start + CHUNK
        worst = max(worst, float(np.abs(new[start:stop] - old[start:stop]).max()))
    return worst


def run_alternating(
    problem: Problem,
    init_mode: str = "observed",
    step_mode: str = "backtracking",
    order: str = "jacobi",
) -> tuple[ModelState, IterationTrace]:
    """Alternate score and predictor sweeps until the relative objective
    decrease falls below hp.tol or hp.max_iters is reached.

    In ``fixed-eta`` mode an objective exceeding 10x its initial value
    raises :class:`DivergenceError` instead of being clamped.
    """
    if step_mode not in STEP_MODES:
        raise ValueError(f"unknown step mode {step_mode!r}, expected one of {STEP_MODES}")
    _check_order(order)
    state = init_state(problem, init_mode)
    f_prev = objective(state, problem)
    f_init = f_prev
    divergence_limit = 10.0 * f_init if f_init > 0 else 1e-9
    trace = IterationTrace()
    started = time.perf_counter()
    for iteration in range(1, problem.hp.max_iters + 1):
        old_scores, old_predictors = state.scores, state.predictors
        if step_mode == "fixed-eta":
            state = step_scores(state, problem, order=order)
            state = step_predictors(state, problem, order=order)
        elif step_mode == "backtracking":
            state, f_prev = _backtracking_half_sweep(state, problem, "scores", order, f_prev)
            state, f_prev = _backtracking_half_sweep(state, problem, "predictors", order, f_prev)
        else:
            state = _closed_form_sweep(state, problem, "scores", order)
            state = _closed_form_sweep(state, problem, "predictors", order)
        terms = objective_terms(state, problem)
        f_new = sum(terms)
        max_delta = max(
            _max_abs_diff(state.scores, old_scores),
            _max_abs_diff(state.predictors, old_predictors),
        )
        trace.append(
            IterationRecord(
                iteration,
                f_new,
                terms[0],
                terms[1],
                terms[2],
                max_delta,
                time.perf_counter() - started,
            )
        )
        if step_mode == "fixed-eta" and f_new > divergence_limit:
            raise DivergenceError(
                f"objective {f_new:.6g} exceeded 10x its initial value {f_init:.6g} "
                f"at iteration {iteration}; reduce eta or use backtracking"
            )
        rel_decrease = (f_prev - f_new) / f_prev if f_prev > 0 else 0.0
        f_prev = f_new
        if rel_decrease < problem.hp.tol:
            break
    return state, trace


# ---------------------------------------------------------------------------
# Checkpointing


def save_checkpoint(path, state: ModelState) -> None:
    """Write scores and predictors as versioned row-major float64 binary."""
    n, m = state.scores.shape
    d = state.predictors.shape[2]
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<IQQQ", _CKPT_VERSION, n, m, d))
        fh.write(np.ascontiguousarray(state.scores).tobytes())
        fh.write(np.ascontiguousarray(state.predictors).tobytes())


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        version, n, m, d = struct.unpack("<IQQQ", fh.read(4 + 8 * 3))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        scores = np.frombuffer(fh.read(n * m * 8), dtype=np.float64).reshape(n, m).copy()
        body = fh.read()
    if len(body) != n * m * d * 8:
        raise ValueError(f"{path}: truncated checkpoint body")
    predictors = np.frombuffer(body, dtype=np.float64).reshape(n, m, d).copy()
    return ModelState(scores, predictors)
