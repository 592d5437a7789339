"""Exact k-nearest-neighbor graph with forward and reverse adjacency.

Distances are squared Euclidean on raw features, computed by direct
differencing (no Gram expansion) so results match a naive per-pair scan
bitwise. Ties are broken by ascending index via a stable sort. Search is
an exact O(n^2 d) scan; approximate methods are out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DataError, validate_features

# Rows per block when forming the (block, n, d) difference tensor.
_BLOCK = 64


@dataclass
class NeighborhoodGraph:
    """Forward lists (the kappa nearest neighbors of each point) and the
    exact reverse index ``reverse[j] = sorted {k : j in forward[k]}``."""

    kappa: int
    forward: np.ndarray
    reverse: list = field(repr=False)

    def __post_init__(self):
        self.forward = np.asarray(self.forward, dtype=np.int64)
        if self.forward.ndim != 2 or self.forward.shape[1] != self.kappa:
            raise ValueError("forward must be n x kappa")

    @property
    def n(self) -> int:
        return self.forward.shape[0]

    @property
    def reverse_counts(self) -> np.ndarray:
        return np.array([len(r) for r in self.reverse], dtype=np.int64)

    @classmethod
    def empty(cls, n: int) -> "NeighborhoodGraph":
        """Graph with no neighborhoods (kappa = 0); useful for degenerate cases."""
        forward = np.zeros((n, 0), dtype=np.int64)
        return cls(0, forward, [np.zeros(0, dtype=np.int64) for _ in range(n)])


def _build_reverse(forward: np.ndarray, n: int) -> list:
    flat = forward.ravel()
    order = np.argsort(flat, kind="stable")  # stable: owners stay ascending per target
    owners = order // forward.shape[1] if forward.shape[1] else order
    counts = np.bincount(flat, minlength=n)
    return [r.astype(np.int64) for r in np.split(owners, np.cumsum(counts)[:-1])]


def build_knn(features: np.ndarray, kappa: int, include_self: bool = False) -> NeighborhoodGraph:
    """Build the exact kappa-nearest-neighbor graph.

    ``forward[i]`` holds the indices of the kappa smallest squared Euclidean
    distances to point i, self excluded unless ``include_self``, with exact
    ties resolved toward the smaller index.
    """
    x = validate_features(features)
    n = x.shape[0]
    if kappa < 1:
        raise DataError(f"kappa must be >= 1, got {kappa}")
    needed = kappa if include_self else kappa + 1
    if n < needed:
        raise DataError(f"kappa={kappa} too large for n={n} (include_self={include_self})")

    forward = np.empty((n, kappa), dtype=np.int64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        diff = x[start:stop, None, :] - x[None, :, :]
        d2 = (diff * diff).sum(axis=-1)
        if not include_self:
            d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")
        forward[start:stop] = order[:, :kappa]
    return NeighborhoodGraph(kappa, forward, _build_reverse(forward, n))


def neighbor_distances(features: np.ndarray, graph: NeighborhoodGraph) -> np.ndarray:
    """Squared distances from each point to its forward neighbors, (n, kappa)."""
    x = validate_features(features)
    diff = x[:, None, :] - x[graph.forward]
    return (diff * diff).sum(axis=-1)


def dump_graph(path, graph: NeighborhoodGraph, features: np.ndarray) -> None:
    """Write CSV rows ``i,rank,j,distance`` (distance = squared Euclidean)."""
    d2 = neighbor_distances(features, graph)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("i,rank,j,distance\n")
        for i in range(graph.n):
            for rank in range(graph.kappa):
                fh.write(f"{i},{rank},{graph.forward[i, rank]},{repr(float(d2[i, rank]))}\n")
