"""Ranking metrics over held-out tag entries, plus parameter sweeps.

Evaluation only considers entries that were observed and then removed by
the holdout protocol: their pre-holdout signs are the ground truth. Average
precision is computed per image over its held-out entries and averaged
across images that have at least one held-out positive (macro). The
precision-recall curve pools all held-out entries and sweeps a global
threshold over the distinct completed scores.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .data import HoldoutSplit, TagObservations, apply_holdout
from .neighbors import build_knn
from .objective import Hyperparams, Problem
from .solver import run_alternating

SWEEPABLE = ("alpha", "beta", "kappa")


@dataclass
class EvalReport:
    """MAP, per-image APs, pooled PR points and holdout entry counts."""

    map: float
    per_image_ap: list
    pr_points: list  # (threshold, precision, recall), thresholds descending
    counts: dict  # evaluated_images, heldout_positives, heldout_negatives
    micro_ap: float | None = None

    def to_dict(self) -> dict:
        out = {
            "map": self.map,
            "counts": self.counts,
            "per_image_ap": self.per_image_ap,
        }
        if self.micro_ap is not None:
            out["micro_ap"] = self.micro_ap
        return out

    def write_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_pr_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("threshold,precision,recall\n")
            for threshold, precision, recall in self.pr_points:
                fh.write(f"{threshold!r},{precision!r},{recall!r}\n")


def rank_heldout(
    scores: np.ndarray, split: HoldoutSplit, original_obs: TagObservations, i: int
) -> list:
    """Held-out tags of image i by descending score, ties toward the smaller
    tag index. Returns (tag index, score, truth sign) triples; truth comes
    from the pre-holdout observations."""
    held = np.flatnonzero(split.holdout_mask[i])
    if held.size == 0:
        raise ValueError(f"image {i} has no held-out entries")
    row = np.asarray(scores[i], dtype=np.float64)
    order = np.lexsort((held, -row[held]))
    return [(int(j), float(row[j]), int(original_obs.signs[i, j])) for j in held[order]]


def average_precision(truth_signs) -> float:
    """AP of a ranked +/-1 list: mean over positives of precision-at-their-rank."""
    arr = np.asarray(truth_signs, dtype=np.int64)
    positives = arr == 1
    total = int(positives.sum())
    if total == 0:
        raise ValueError("ranked list contains no positives")
    ranks = np.arange(1, arr.size + 1, dtype=np.float64)
    hits = np.cumsum(positives)
    # fsum: correctly rounded, so the value is independent of summation order
    return math.fsum(hits[positives] / ranks[positives]) / total


def _pooled_pr_points(flat_scores: np.ndarray, flat_signs: np.ndarray) -> list:
    order = np.argsort(-flat_scores, kind="stable")
    s = flat_scores[order]
    pos = flat_signs[order] == 1
    total_pos = int(pos.sum())
    cum_tp = np.cumsum(pos)
    # last index of each distinct score value
    ends = np.flatnonzero(np.append(s[1:] != s[:-1], True))
    points = []
    for e in ends:
        tp = float(cum_tp[e])
        points.append((float(s[e]), tp / (e + 1.0), tp / total_pos if total_pos else 0.0))
    return points


def evaluate_completion(
    scores: np.ndarray,
    split: HoldoutSplit,
    original_obs: TagObservations,
    micro: bool = False,
) -> EvalReport:
    """Score completed tags against the held-out entries.

    Images with no held-out positive are skipped in the macro average.
    ``micro=True`` additionally reports AP over the single pooled ranking
    (ties broken by ascending flat entry index).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if split.count == 0:
        raise ValueError("holdout split is empty, nothing to evaluate")
    if scores.shape != split.holdout_mask.shape:
        raise ValueError(
            f"scores shape {scores.shape} does not match holdout {split.holdout_mask.shape}"
        )
    per_image_ap = []
    evaluated = 0
    for i in np.flatnonzero(split.holdout_mask.any(axis=1)):
        ranked = rank_heldout(scores, split, original_obs, int(i))
        signs = [sign for _, _, sign in ranked]
        if any(sign == 1 for sign in signs):
            per_image_ap.append(average_precision(signs))
            evaluated += 1
    if not per_image_ap:
        raise ValueError("no image has a held-out positive; MAP undefined")

    held = split.holdout_mask == 1
    flat_scores = scores[held]
    flat_signs = original_obs.signs[held].astype(np.int64)
    report = EvalReport(
        map=math.fsum(per_image_ap) / len(per_image_ap),
        per_image_ap=per_image_ap,
        pr_points=_pooled_pr_points(flat_scores, flat_signs),
        counts={
            "evaluated_images": evaluated,
            "heldout_positives": int((flat_signs == 1).sum()),
            "heldout_negatives": int((flat_signs == -1).sum()),
        },
    )
    if micro:
        order = np.argsort(-flat_scores, kind="stable")
        report.micro_ap = average_precision(flat_signs[order])
    return report


def sweep_parameter(
    features: np.ndarray,
    obs: TagObservations,
    param: str,
    values,
    hp: Hyperparams | None = None,
    kappa: int = 5,
    include_self: bool = False,
    holdout_fraction: float = 0.4,
    seed: int = 42,
    init_mode: str = "observed",
    step_mode: str = "closed-form",
    order: str = "jacobi",
) -> list:
    """Re-run holdout -> solve -> evaluate for each value of one parameter,
    everything else (including the holdout seed) fixed.

    Returns (value, MAP) rows in input order. Solver errors are re-raised
    annotated with the failing value.
    """
    if param not in SWEEPABLE:
        raise ValueError(f"cannot sweep {param!r}, expected one of {SWEEPABLE}")
    values = list(values)
    if not values:
        raise ValueError("empty sweep value list")
    hp = hp if hp is not None else Hyperparams()
    masked, split = apply_holdout(obs, holdout_fraction, seed)
    graph = None if param == "kappa" else build_knn(features, kappa, include_self)
    rows = []
    for value in values:
        try:
            if param == "kappa":
                run_graph = build_knn(features, int(value), include_self)
                run_hp = hp
            else:
                run_graph = graph
                run_hp = replace(hp, **{param: float(value)})
            problem = Problem(features, masked, run_graph, run_hp)
            state, _ = run_alternating(problem, init_mode, step_mode, order)
            report = evaluate_completion(state.scores, split, obs)
        except Exception as exc:
            raise RuntimeError(f"sweep {param}={value} failed: {exc}") from exc
        rows.append((value, report.map))
    return rows


def write_sweep_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("value,map\n")
        for value, map_value in rows:
            fh.write(f"{value!r},{map_value!r}\n")
