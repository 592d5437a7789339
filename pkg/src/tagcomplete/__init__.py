"""Image tag completion by jointly learned tag scores and neighborhood-local
linear predictors."""

from .data import (
    DataError,
    HoldoutSplit,
    TagObservations,
    apply_holdout,
    derive_seed,
    load_dataset,
    standardize_features,
    synthesize,
    write_dataset,
)
from .estimator import LocalTagCompleter
from .evaluation import EvalReport, average_precision, evaluate_completion, rank_heldout, sweep_parameter
from .neighbors import NeighborhoodGraph, build_knn
from .objective import (
    Hyperparams,
    ModelState,
    Problem,
    grad_predictor,
    grad_scores,
    objective,
    objective_terms,
    predict_local,
)
from .solver import (
    DivergenceError,
    IterationTrace,
    closed_form_predictor,
    closed_form_scores,
    init_state,
    load_checkpoint,
    run_alternating,
    save_checkpoint,
    step_predictors,
    step_scores,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DivergenceError",
    "EvalReport",
    "HoldoutSplit",
    "Hyperparams",
    "IterationTrace",
    "LocalTagCompleter",
    "ModelState",
    "NeighborhoodGraph",
    "Problem",
    "TagObservations",
    "apply_holdout",
    "average_precision",
    "build_knn",
    "closed_form_predictor",
    "closed_form_scores",
    "derive_seed",
    "evaluate_completion",
    "grad_predictor",
    "grad_scores",
    "init_state",
    "load_checkpoint",
    "load_dataset",
    "objective",
    "objective_terms",
    "predict_local",
    "rank_heldout",
    "run_alternating",
    "save_checkpoint",
    "standardize_features",
    "step_predictors",
    "step_scores",
    "sweep_parameter",
    "synthesize",
    "write_dataset",
]
