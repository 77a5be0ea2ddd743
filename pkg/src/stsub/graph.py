"""Label and pseudo (cross-view KNN) weight matrices and their graph Laplacians."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist


class GraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    W: np.ndarray
    role: str

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise GraphError(f"weight matrix must be square, got {W.shape}")
        if not np.array_equal(W, W.T):
            raise GraphError("weight matrix must be exactly symmetric")
        if not np.all((W == 0) | (W == 1)):
            raise GraphError("weight matrix entries must be 0 or 1")
        if self.role not in ("labeled", "pseudo"):
            raise GraphError(f"unknown role {self.role!r}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def size(self) -> int:
        return self.W.shape[0]

    def edges(self) -> set:
        """Off-diagonal edges as ``(i, j)`` pairs with ``i < j``."""
        i, j = np.nonzero(np.triu(self.W, k=1))
        return set(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True, eq=False)
class LaplacianPair:
    L: np.ndarray
    D: np.ndarray


def label_weights(person_ids) -> WeightMatrix:
    """``W_ij = 1`` iff samples i and j share a person id, diagonal included."""
    y = np.asarray(person_ids).reshape(-1)
    if y.size < 1:
        raise GraphError("need at least one labeled sample")
    return WeightMatrix((y[:, None] == y[None, :]).astype(np.float64), "labeled")


def knn_lists(Z: np.ndarray, view_ids, k: int) -> np.ndarray:
    """Per-sample indices of the k nearest samples from any other view.

    Distance ties go to the lower sample index.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    views = np.asarray(view_ids).reshape(-1)
    u = Z.shape[1]
    if views.shape[0] != u:
        raise GraphError(f"{views.shape[0]} view ids for {u} samples")
    if k < 1:
        raise GraphError("k must be >= 1")
    if np.unique(views).size < 2:
        raise GraphError("cross-view neighbors need at least two views")
    dist = cdist(Z.T, Z.T, "sqeuclidean")
    out = np.empty((u, k), dtype=np.int64)
    for i in range(u):
        cand = np.flatnonzero(views != views[i])
        if cand.size < k:
            raise GraphError(f"sample {i} has {cand.size} cross-view candidates, fewer than k={k}")
        order = np.argsort(dist[i, cand], kind="stable")
        out[i] = cand[order[:k]]
    return out


def knn_cross_view_weights(Z: np.ndarray, view_ids, k: int) -> WeightMatrix:
    """Pseudo pairwise weights: ``W_ij = 1`` if i is among j's neighbors or j among i's."""
    nbrs = knn_lists(Z, view_ids, k)
    u = nbrs.shape[0]
    W = np.zeros((u, u))
    rows = np.repeat(np.arange(u), nbrs.shape[1])
    W[rows, nbrs.ravel()] = 1.0
    W = np.maximum(W, W.T)
    return WeightMatrix(W, "pseudo")


def empty_weights(u: int) -> WeightMatrix:
    return WeightMatrix(np.zeros((u, u)), "pseudo")


def laplacian(W) -> LaplacianPair:
    W = W.W if isinstance(W, WeightMatrix) else np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise GraphError(f"weight matrix must be square, got {W.shape}")
    if not np.array_equal(W, W.T):
        raise GraphError("weight matrix must be symmetric")
    if np.any(W < 0):
        raise GraphError("weight matrix must be nonnegative")
    D = np.diag(W.sum(axis=1))
    return LaplacianPair(D - W, D)


def edge_change(prev: WeightMatrix, cur: WeightMatrix) -> tuple[int, int]:
    """Number of edges that differ between two graphs, and the size of their union."""
    a, b = prev.edges(), cur.edges()
    return len(a ^ b), len(a | b)


def dump_matrix_market(W: WeightMatrix, path) -> None:
    i, j = np.nonzero(np.tril(W.W))
    lines = ["%%MatrixMarket matrix coordinate real symmetric", f"{W.size} {W.size} {i.size}"]
    lines += [f"{a + 1} {b + 1} {W.W[a, b]:g}" for a, b in zip(i, j)]
    Path(path).write_text("\n".join(lines) + "\n")
