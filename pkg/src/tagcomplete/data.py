"""Loading, validation, synthesis and masking of feature/tag data.

File formats
------------
Features file: CSV, one row per image, d numeric columns. Lines starting
with ``#`` are comments and are skipped.

Tags file: a header line ``m=<int>`` declaring the tag count, then CSV
triplets ``image_id,tag_id,value`` with value in {+1,-1}. Pairs absent
from the file are missing. Tag ids that never occur produce all-missing
columns.

Holdout file: CSV pairs ``image_id,tag_id`` of held-out entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Fixed sub-stream ids so that all randomness can flow from one master seed.
_STREAMS = {"holdout": 1, "synth": 2}


class DataError(ValueError):
    """Malformed input data or out-of-range configuration."""


def derive_seed(seed: int, stream: str) -> int:
    """Derive a named sub-stream seed from a master seed."""
    ss = np.random.SeedSequence([int(seed), _STREAMS[stream]])
    return int(ss.generate_state(1)[0])


@dataclass
class TagObservations:
    """Partially observed +/-1 tag assignments for n images and m tags.

    ``signs`` is an n x m matrix over {+1,-1}; ``mask`` is an n x m matrix
    over {0,1} where 1 marks an observed entry. Entries with mask 0 carry
    a +1 placeholder sign which must never influence any computation.
    """

    signs: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.signs = np.asarray(self.signs, dtype=np.int8)
        self.mask = np.asarray(self.mask, dtype=np.uint8)
        if self.signs.ndim != 2 or self.mask.shape != self.signs.shape:
            raise DataError("signs and mask must be 2-D with equal shapes")
        if not np.isin(self.signs, (-1, 1)).all():
            raise DataError("tag signs must be +1 or -1")
        if not np.isin(self.mask, (0, 1)).all():
            raise DataError("mask entries must be 0 or 1")

    @property
    def n(self) -> int:
        return self.signs.shape[0]

    @property
    def m(self) -> int:
        return self.signs.shape[1]

    @property
    def observed_count(self) -> int:
        return int(self.mask.sum())

    def copy(self) -> "TagObservations":
        return TagObservations(self.signs.copy(), self.mask.copy())


@dataclass
class HoldoutSplit:
    """Entries removed from the observed mask for later evaluation."""

    holdout_mask: np.ndarray
    fraction: float
    seed: int

    def __post_init__(self):
        self.holdout_mask = np.asarray(self.holdout_mask, dtype=np.uint8)

    @property
    def count(self) -> int:
        return int(self.holdout_mask.sum())


def validate_features(values) -> np.ndarray:
    """Coerce to a float64 n x d matrix and enforce finiteness."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"feature matrix must be 2-D, got ndim={x.ndim}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise DataError("n >= 1 violated" if x.shape[0] < 1 else "d >= 1 violated")
    if not np.isfinite(x).all():
        bad = np.argwhere(~np.isfinite(x))[0]
        raise DataError(f"non-finite feature value at image {bad[0]}, column {bad[1]}")
    return x


def load_features(path) -> np.ndarray:
    """Read a features CSV. Errors name the offending file and line."""
    rows = []
    arity = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if arity is None:
                arity = len(parts)
            elif len(parts) != arity:
                raise DataError(
                    f"{path}:{lineno}: malformed row, expected {arity} columns, got {len(parts)}"
                )
            try:
                row = [float(p) for p in parts]
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
            for col, v in enumerate(row):
                if not np.isfinite(v):
                    raise DataError(f"{path}:{lineno}: non-finite feature value in column {col}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: n >= 1 violated (no feature rows)")
    return validate_features(rows)


def load_tags(path, n: int) -> TagObservations:
    """Read a tags CSV (``m=<int>`` header, then image_id,tag_id,value triplets)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    header_idx = None
    for idx, line in enumerate(lines):
        if line.strip() and not line.strip().startswith("#"):
            header_idx = idx
            break
    if header_idx is None:
        raise DataError(f"{path}: missing 'm=<int>' header line")
    header = lines[header_idx].strip()
    if not header.startswith("m="):
        raise DataError(f"{path}:{header_idx + 1}: expected 'm=<int>' header, got {header!r}")
    try:
        m = int(header[2:])
    except ValueError:
        raise DataError(f"{path}:{header_idx + 1}: malformed tag count in header") from None
    if m < 1:
        raise DataError(f"{path}:{header_idx + 1}: m >= 1 violated")

    signs = np.ones((n, m), dtype=np.int8)
    mask = np.zeros((n, m), dtype=np.uint8)
    for lineno, line in enumerate(lines[header_idx + 1 :], start=header_idx + 2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: malformed row, expected 3 columns, got {len(parts)}")
        try:
            i, j, value = int(parts[0]), int(parts[1]), int(parts[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-integer triplet entry") from None
        if not 0 <= i < n:
            raise DataError(f"{path}:{lineno}: image id {i} out of range [0, {n})")
        if not 0 <= j < m:
            raise DataError(f"{path}:{lineno}: tag id {j} out of range [0, {m})")
        if value not in (1, -1):
            raise DataError(f"{path}:{lineno}: tag value must be +1 or -1, got {value}")
        if mask[i, j]:
            raise DataError(f"{path}:{lineno}: duplicate entry for image {i}, tag {j}")
        signs[i, j] = value
        mask[i, j] = 1
    return TagObservations(signs, mask)


def load_dataset(features_path, tags_path) -> tuple[np.ndarray, TagObservations]:
    """Load and cross-validate a features file and a tags file."""
    features = load_features(features_path)
    obs = load_tags(tags_path, n=features.shape[0])
    return features, obs


def write_features(path, features: np.ndarray) -> None:
    features = validate_features(features)
    with open(path, "w", encoding="utf-8") as fh:
        for row in features:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def write_tags(path, obs: TagObservations) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"m={obs.m}\n")
        for i, j in np.argwhere(obs.mask == 1):
            fh.write(f"{i},{j},{'+1' if obs.signs[i, j] > 0 else '-1'}\n")


def write_dataset(features_path, tags_path, features, obs) -> None:
    write_features(features_path, features)
    write_tags(tags_path, obs)


def write_holdout(path, split: HoldoutSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in np.argwhere(split.holdout_mask == 1):
            fh.write(f"{i},{j}\n")


def load_holdout_mask(path, n: int, m: int) -> np.ndarray:
    """Read a holdout file back into an n x m binary mask."""
    mask = np.zeros((n, m), dtype=np.uint8)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: malformed row, expected 2 columns")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-integer pair") from None
            if not (0 <= i < n and 0 <= j < m):
                raise DataError(f"{path}:{lineno}: entry ({i},{j}) out of range")
            mask[i, j] = 1
    return mask


def apply_holdout(
    obs: TagObservations, fraction: float, seed: int, per_row: bool = False
) -> tuple[TagObservations, HoldoutSplit]:
    """Remove a fraction of the observed entries, uniformly without replacement.

    Returns a copy of ``obs`` with the sampled entries masked out, plus the
    split recording them. Sampling is global over all observed entries by
    default; ``per_row=True`` instead removes the fraction within each image's
    observed entries (rounding per row).

    Deterministic given ``seed``.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"holdout fraction must lie in (0, 1), got {fraction}")
    if obs.observed_count == 0:
        raise DataError("cannot hold out entries: zero observed entries")
    rng = np.random.default_rng(seed)
    holdout = np.zeros_like(obs.mask)
    if per_row:
        for i in range(obs.n):
            row_obs = np.flatnonzero(obs.mask[i])
            k = int(round(fraction * row_obs.size))
            if k > 0:
                chosen = rng.choice(row_obs, size=k, replace=False)
                holdout[i, chosen] = 1
    else:
        observed = np.flatnonzero(obs.mask)
        k = int(round(fraction * observed.size))
        if k > 0:
            chosen = rng.choice(observed, size=k, replace=False)
            holdout.ravel()[chosen] = 1
    masked = obs.copy()
    masked.mask[holdout == 1] = 0
    return masked, HoldoutSplit(holdout, float(fraction), int(seed))


def standardize_features(features: np.ndarray) -> np.ndarray:
    """Per-dimension zero mean, unit variance. Constant columns are only centered."""
    x = validate_features(features)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0.0] = 1.0
    return (x - mean) / std


def _cluster_count(n: int, d: int, kappa: int) -> int:
    # Each cluster must comfortably contain a kappa-neighborhood, and there
    # must be enough even-parity hypercube corners to host the centers.
    corners = 2 ** (d - 1) if d < 4 else 8
    return max(1, min(8, corners, n // (2 * (kappa + 1))))


def _cluster_centers(rng: np.random.Generator, n_clusters: int, d: int, scale: float) -> np.ndarray:
    # Distinct even-parity corners of {-scale, +scale}^d: any two differ in
    # at least two coordinates, keeping clusters well separated.
    centers = np.empty((n_clusters, d))
    seen = set()
    idx = 0
    while idx < n_clusters:
        corner = rng.choice([-1.0, 1.0], size=d)
        if d > 1 and (corner < 0).sum() % 2 == 1:
            corner[0] = -corner[0]
        key = tuple(corner)
        if key in seen:
            continue
        seen.add(key)
        centers[idx] = scale * corner
        idx += 1
    return centers


def synthesize(
    n: int, d: int, m: int, kappa: int, noise: float, seed: int
) -> tuple[np.ndarray, TagObservations, np.ndarray]:
    """Generate a cluster-structured instance with planted locally linear scores.

    Features fall into well-separated Gaussian clusters; the ground-truth
    score of image i is ``M_c x_i`` for its cluster's map ``M_c``, plus
    Gaussian noise of scale ``noise``. Observed signs are the signs of the
    planted scores (score 0 maps to +1) with a full mask.

    Returns (features, observations, planted score matrix).
    """
    if kappa < 1 or n <= kappa:
        raise DataError(f"require n > kappa >= 1, got n={n}, kappa={kappa}")
    if d < 1 or m < 1:
        raise DataError("d >= 1 and m >= 1 required")
    if noise < 0:
        raise DataError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    n_clusters = _cluster_count(n, d, kappa)
    labels = np.arange(n) % n_clusters
    centers = _cluster_centers(rng, n_clusters, d, scale=8.0)
    features = centers[labels] + rng.normal(scale=1.0, size=(n, d))
    maps = rng.normal(scale=1.0 / np.sqrt(d), size=(n_clusters, m, d))
    # Rescale each map along its cluster-center direction so that the
    # per-cluster tag offset M_c center_c is comparable to the within-cluster
    # variation; otherwise signs are near-constant inside every cluster and
    # the instance carries no local structure to learn.
    offsets = rng.normal(scale=1.5, size=(n_clusters, m))
    for c in range(n_clusters):
        unit = centers[c] / np.linalg.norm(centers[c])
        maps[c] += np.outer(offsets[c] - maps[c] @ centers[c], unit) / np.linalg.norm(centers[c])
    truth = np.einsum("imd,id->im", maps[labels], features)
    if noise > 0:
        truth = truth + rng.normal(scale=noise, size=(n, m))
    signs = np.where(truth >= 0.0, 1, -1).astype(np.int8)
    obs = TagObservations(signs, np.ones((n, m), dtype=np.uint8))
    return features, obs, truth
