"""Command-line experiment runner.

Subcommands: ``complete`` (solve and write outputs), ``evaluate`` (score a
finished run against its holdout), ``sweep`` (one-parameter sensitivity
table), ``synth`` (generate a planted dataset), ``knn-dump`` (inspect the
neighbor graph).

Every run directory receives a resolved ``config.json`` with all defaults
made explicit; feeding it back via ``--config`` reproduces the run
exactly. All randomness flows from ``--seed`` through named sub-streams.

Exit codes: 0 success, 1 numerical failure (divergence/singular system),
2 input or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, fields

import numpy as np
from threadpoolctl import threadpool_limits

from .data import (
    DataError,
    HoldoutSplit,
    apply_holdout,
    derive_seed,
    load_dataset,
    load_features,
    load_holdout_mask,
    standardize_features,
    synthesize,
    write_features,
    write_holdout,
    write_tags,
)
from .evaluation import evaluate_completion, sweep_parameter, write_sweep_csv
from .neighbors import build_knn, dump_graph
from .objective import Hyperparams, Problem
from .solver import (
    INIT_MODES,
    ORDERS,
    STEP_MODES,
    DivergenceError,
    run_alternating,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    """Fully resolved settings of one run; serialized into the run directory."""

    features: str
    tags: str
    out: str
    alpha: float = 1.0
    beta: float = 1.0
    kappa: int = 5
    eta: float = 1e-3
    tol: float = 1e-6
    max_iters: int = 200
    holdout_frac: float = 0.4
    holdout_per_row: bool = False
    seed: int = 42
    init: str = "observed"
    step: str = "backtracking"
    order: str = "jacobi"
    include_self: bool = False
    standardize: bool = False
    threads: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.holdout_frac < 1.0:
            raise DataError(f"--holdout-frac must lie in [0, 1), got {self.holdout_frac}")
        if self.threads < 1:
            raise DataError(f"--threads must be >= 1, got {self.threads}")
        if self.init not in INIT_MODES:
            raise DataError(f"--init must be one of {INIT_MODES}, got {self.init!r}")
        if self.step not in STEP_MODES:
            raise DataError(f"--step must be one of {STEP_MODES}, got {self.step!r}")
        if self.order not in ORDERS:
            raise DataError(f"--order must be one of {ORDERS}, got {self.order!r}")
        if self.kappa < 1:
            raise DataError(f"--kappa must be >= 1, got {self.kappa}")
        try:
            self.hyperparams()
        except ValueError as exc:
            raise DataError(str(exc)) from None

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            alpha=self.alpha,
            beta=self.beta,
            eta=self.eta,
            max_iters=self.max_iters,
            tol=self.tol,
        )

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _load_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    known = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    return raw


def _resolve_config(args) -> RunConfig:
    base = _load_config_file(args.config) if getattr(args, "config", None) else {}
    values = {}
    for f in fields(RunConfig):
        cli_value = getattr(args, f.name, None)
        if cli_value is not None:
            values[f.name] = cli_value
        elif f.name in base:
            values[f.name] = base[f.name]
    for required in ("features", "tags", "out"):
        if required not in values:
            raise DataError(f"missing required setting --{required.replace('_', '-')}")
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def _require_file(path, what: str) -> None:
    if not os.path.isfile(path):
        raise DataError(f"missing {what}: {path}")


def _thread_context(threads: int):
    # threads=1 is the determinism reference: pin the BLAS pools too.
    return threadpool_limits(limits=1) if threads == 1 else nullcontext()


def _write_scores_csv(path, scores: np.ndarray) -> None:
    write_features(path, scores)


def _load_scores_csv(path) -> np.ndarray:
    return load_features(path)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_complete(args) -> int:
    cfg = _resolve_config(args)
    _require_file(cfg.features, "features file")
    _require_file(cfg.tags, "tags file")
    features, obs = load_dataset(cfg.features, cfg.tags)
    if cfg.standardize:
        features = standardize_features(features)
    split = None
    masked = obs
    if cfg.holdout_frac > 0:
        masked, split = apply_holdout(
            obs, cfg.holdout_frac, derive_seed(cfg.seed, "holdout"), cfg.holdout_per_row
        )
    graph = build_knn(features, cfg.kappa, cfg.include_self)
    problem = Problem(features, masked, graph, cfg.hyperparams())
    with _thread_context(cfg.threads):
        state, trace = run_alternating(problem, cfg.init, cfg.step, cfg.order)
    os.makedirs(cfg.out, exist_ok=True)
    cfg.write_json(os.path.join(cfg.out, "config.json"))
    _write_scores_csv(os.path.join(cfg.out, "scores.csv"), state.scores)
    save_checkpoint(os.path.join(cfg.out, "checkpoint.bin"), state)
    trace.write_csv(os.path.join(cfg.out, "trace.csv"))
    if split is not None:
        write_holdout(os.path.join(cfg.out, "holdout.csv"), split)
    final = trace.records[-1]
    print(
        f"completed {problem.n} images x {problem.m} tags in {len(trace)} iterations, "
        f"objective {final.objective:.6g} -> {cfg.out}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    run_dir = args.run
    config_path = os.path.join(run_dir, "config.json")
    _require_file(config_path, "run config")
    cfg = RunConfig(**_load_config_file(config_path))
    cfg.validate()
    scores_path = os.path.join(run_dir, "scores.csv")
    _require_file(scores_path, "completed score matrix")
    _require_file(cfg.features, "features file")
    _require_file(cfg.tags, "tags file")
    _, obs = load_dataset(cfg.features, cfg.tags)
    scores = _load_scores_csv(scores_path)
    holdout_path = os.path.join(run_dir, "holdout.csv")
    holdout_seed = derive_seed(cfg.seed, "holdout")
    if os.path.isfile(holdout_path):
        mask = load_holdout_mask(holdout_path, obs.n, obs.m)
        split = HoldoutSplit(mask, cfg.holdout_frac, holdout_seed)
    elif cfg.holdout_frac > 0:
        _, split = apply_holdout(obs, cfg.holdout_frac, holdout_seed, cfg.holdout_per_row)
    else:
        raise DataError(f"{run_dir}: run recorded no holdout; nothing to evaluate")
    report = evaluate_completion(scores, split, obs, micro=args.micro_map)
    report.write_json(os.path.join(run_dir, "report.json"))
    report.write_pr_csv(os.path.join(run_dir, "pr_curve.csv"))
    print(f"MAP {report.map:.6f} over {report.counts['evaluated_images']} images -> {run_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    if not 0.0 < cfg.holdout_frac < 1.0:
        raise DataError("sweep requires --holdout-frac in (0, 1)")
    _require_file(cfg.features, "features file")
    _require_file(cfg.tags, "tags file")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise DataError(f"--values must be comma-separated numbers, got {args.values!r}") from None
    if not values:
        raise DataError("--values is empty")
    features, obs = load_dataset(cfg.features, cfg.tags)
    if cfg.standardize:
        features = standardize_features(features)
    with _thread_context(cfg.threads):
        rows = sweep_parameter(
            features,
            obs,
            args.param,
            values,
            hp=cfg.hyperparams(),
            kappa=cfg.kappa,
            include_self=cfg.include_self,
            holdout_fraction=cfg.holdout_frac,
            seed=derive_seed(cfg.seed, "holdout"),
            init_mode=cfg.init,
            step_mode=cfg.step,
            order=cfg.order,
        )
    os.makedirs(cfg.out, exist_ok=True)
    cfg.write_json(os.path.join(cfg.out, "config.json"))
    write_sweep_csv(os.path.join(cfg.out, "sweep.csv"), rows)
    for value, map_value in rows:
        print(f"{args.param}={value:g}: MAP {map_value:.6f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    features, obs, truth = synthesize(
        args.n, args.d, args.m, args.kappa, args.noise, derive_seed(args.seed, "synth")
    )
    os.makedirs(args.out, exist_ok=True)
    write_features(os.path.join(args.out, "features.csv"), features)
    write_tags(os.path.join(args.out, "tags.csv"), obs)
    _write_scores_csv(os.path.join(args.out, "truth_scores.csv"), truth)
    print(f"synthesized {args.n} images x {args.m} tags (d={args.d}) -> {args.out}")
    return EXIT_OK


def cmd_knn_dump(args) -> int:
    _require_file(args.features, "features file")
    features = load_features(args.features)
    if args.standardize:
        features = standardize_features(features)
    graph = build_knn(features, args.kappa, args.include_self)
    dump_graph(args.out, graph, features)
    print(f"wrote {graph.n * graph.kappa} graph edges -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="resolved-config JSON; explicit flags override it")
    p.add_argument("--features", help="features CSV path")
    p.add_argument("--tags", help="tags CSV path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--alpha", type=float, help="predictor complexity weight")
    p.add_argument("--beta", type=float, help="observed-tag fidelity weight")
    p.add_argument("--kappa", type=int, help="neighborhood size")
    p.add_argument("--eta", type=float, help="descent step")
    p.add_argument("--tol", type=float, help="relative objective-decrease stop threshold")
    p.add_argument("--max-iters", dest="max_iters", type=int, help="iteration cap")
    p.add_argument(
        "--holdout-frac",
        dest="holdout_frac",
        type=float,
        help="fraction of observed entries to remove before solving (0 disables)",
    )
    p.add_argument(
        "--holdout-per-row",
        dest="holdout_per_row",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="sample the holdout within each image instead of globally",
    )
    p.add_argument("--seed", type=int, help="master seed for all sub-streams")
    p.add_argument("--init", choices=INIT_MODES, help="state initialization")
    p.add_argument("--step", choices=STEP_MODES, help="sweep update rule")
    p.add_argument("--order", choices=ORDERS, help="within-sweep application order")
    p.add_argument(
        "--include-self",
        dest="include_self",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="allow a point in its own neighborhood",
    )
    p.add_argument(
        "--standardize",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="standardize features per dimension",
    )
    p.add_argument("--threads", type=int, help="1 = deterministic reference (pins BLAS pools)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagcomplete",
        description="Complete missing image tags by neighborhood-local linear learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("complete", help="solve and write scores/checkpoint/trace/config")
    _add_run_options(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("evaluate", help="score a completed run against its holdout")
    p.add_argument("--run", required=True, help="run directory produced by 'complete'")
    p.add_argument(
        "--micro-map",
        dest="micro_map",
        action="store_true",
        help="also report pooled (micro) average precision",
    )
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="holdout -> solve -> MAP for each value of one parameter")
    _add_run_options(p)
    p.add_argument("--param", required=True, choices=("alpha", "beta", "kappa"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate a planted cluster-structured dataset")
    p.add_argument("--n", type=int, required=True, help="image count")
    p.add_argument("--d", type=int, required=True, help="feature dimension")
    p.add_argument("--m", type=int, required=True, help="tag count")
    p.add_argument("--kappa", type=int, default=5, help="neighborhood size the data targets")
    p.add_argument("--noise", type=float, default=0.1, help="planted score noise scale")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("knn-dump", help="write the neighbor graph as i,rank,j,distance CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--kappa", type=int, default=5)
    p.add_argument(
        "--include-self", dest="include_self", action="store_true", default=False
    )
    p.add_argument(
        "--standardize", action="store_true", default=False
    )
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_knn_dump)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
