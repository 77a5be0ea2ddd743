"""Gaussian kernel bank, kernel-target alignment weights and convex kernel fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

DEFAULT_C_GRID = tuple(round(2.0 + 0.1 * i, 1) for i in range(11))


class DegenerateKernelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class KernelBank:
    kernels: tuple
    params: tuple
    mu: float
    kind: str = "gaussian"

    def __post_init__(self):
        if len(self.kernels) < 1:
            raise ValueError("a kernel bank needs at least one kernel")
        shape = self.kernels[0].shape
        if any(K.shape != shape for K in self.kernels):
            raise ValueError("all kernels in a bank must share one size")

    @property
    def size(self) -> int:
        return len(self.kernels)

    @property
    def n_samples(self) -> int:
        return self.kernels[0].shape[0]

    def __add__(self, other: "KernelBank") -> "KernelBank":
        # multi-descriptor banks: members are simply concatenated
        return KernelBank(self.kernels + other.kernels, self.params + other.params, self.mu, self.kind)


@dataclass(frozen=True, eq=False)
class FusedKernel:
    K: np.ndarray
    beta: np.ndarray
    labeled: np.ndarray
    unlabeled: np.ndarray

    @property
    def K_ll(self):
        return self.K[np.ix_(self.labeled, self.labeled)]

    @property
    def K_lu(self):
        return self.K[np.ix_(self.labeled, self.unlabeled)]

    @property
    def K_ul(self):
        return self.K[np.ix_(self.unlabeled, self.labeled)]

    @property
    def K_uu(self):
        return self.K[np.ix_(self.unlabeled, self.unlabeled)]

    @property
    def K_l(self):
        """Kernel columns of the labeled samples against every training sample."""
        return self.K[:, self.labeled]

    @property
    def K_u(self):
        return self.K[:, self.unlabeled]


def mean_sq_distance(X: np.ndarray) -> float:
    """Mean squared Euclidean distance over all pairs of distinct columns."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] < 2:
        return 0.0
    return float(np.mean(pdist(X.T, "sqeuclidean")))


def gaussian_kernel(X: np.ndarray, c: float, mu: float | None = None) -> np.ndarray:
    """``K_ij = exp(-||x_i - x_j||^2 / (c * mu))`` over the columns of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("X must be a non-empty d x N matrix")
    if not c > 0:
        raise ValueError("bandwidth factor c must be positive")
    if X.shape[1] == 1:
        return np.ones((1, 1))
    if mu is None:
        mu = mean_sq_distance(X)
    if not mu > 0:
        raise DegenerateKernelError("all samples are identical; mean squared distance is zero")
    D = cdist(X.T, X.T, "sqeuclidean")
    K = np.exp(-D / (c * mu))
    np.fill_diagonal(K, 1.0)
    return K


def linear_kernel(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.T @ X


def build_bank(X: np.ndarray, c_grid=DEFAULT_C_GRID, kind: str = "gaussian") -> KernelBank:
    X = np.asarray(X, dtype=np.float64)
    if kind == "linear":
        return KernelBank((linear_kernel(X),), (1.0,), 1.0, "linear")
    if kind != "gaussian":
        raise ValueError(f"unknown kernel kind {kind!r}")
    c_grid = tuple(float(c) for c in c_grid)
    if not c_grid:
        raise ValueError("c_grid must not be empty")
    mu = mean_sq_distance(X)
    if X.shape[1] > 1 and not mu > 0:
        raise DegenerateKernelError("all samples are identical; mean squared distance is zero")
    return KernelBank(tuple(gaussian_kernel(X, c, mu) for c in c_grid), c_grid, mu, "gaussian")


def cross_kernel(X_train, Z, kind, mu, c_grid, beta) -> np.ndarray:
    """Fused kernel values between training columns (rows) and query columns."""
    beta = np.asarray(beta, dtype=np.float64)
    if kind == "linear":
        return float(beta.sum()) * (X_train.T @ Z)
    D = cdist(X_train.T, Z.T, "sqeuclidean")
    out = np.zeros_like(D)
    for b, c in zip(beta, c_grid):
        out += b * np.exp(-D / (c * mu))
    return out


def ideal_kernel(labeled_person_ids) -> np.ndarray:
    y = np.asarray(labeled_person_ids).reshape(-1)
    if y.size < 1:
        raise ValueError("need at least one labeled sample")
    return (y[:, None] == y[None, :]).astype(np.float64)


def alignment_score(K_ll: np.ndarray, Kd: np.ndarray) -> float:
    K_ll = np.asarray(K_ll, dtype=np.float64)
    Kd = np.asarray(Kd, dtype=np.float64)
    if K_ll.shape != Kd.shape:
        raise ValueError(f"shape mismatch {K_ll.shape} vs {Kd.shape}")
    nk, nd = np.sum(K_ll * K_ll), np.sum(Kd * Kd)
    if nk == 0 or nd == 0:
        raise ZeroDivisionError("alignment of a zero-norm kernel is undefined")
    return float(np.sum(K_ll * Kd) / np.sqrt(nk * nd))


def kernel_weights(bank: KernelBank, Kd: np.ndarray, labeled_indices) -> np.ndarray:
    """Normalized alignment of each bank member's labeled block with the ideal kernel."""
    l = np.asarray(labeled_indices, dtype=np.int64)
    scores = np.array([alignment_score(K[np.ix_(l, l)], Kd) for K in bank.kernels])
    total = scores.sum()
    if not total > 0 or np.any(scores <= 0):
        raise DegenerateKernelError(f"kernel alignments must be positive, got {scores}")
    return scores / total


def fuse(bank: KernelBank, beta, labeled_indices, unlabeled_indices=None) -> FusedKernel:
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (bank.size,):
        raise ValueError(f"expected {bank.size} weights, got {beta.shape}")
    if abs(beta.sum() - 1.0) > 1e-9:
        raise ValueError("kernel weights must sum to one")
    l = np.asarray(labeled_indices, dtype=np.int64)
    if unlabeled_indices is None:
        unlabeled_indices = np.setdiff1d(np.arange(bank.n_samples), l)
    u = np.asarray(unlabeled_indices, dtype=np.int64)
    K = np.zeros_like(bank.kernels[0])
    for b, Km in zip(beta, bank.kernels):
        K += b * Km
    K = 0.5 * (K + K.T)
    return FusedKernel(K, beta, l, u)
