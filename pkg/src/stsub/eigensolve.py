"""Dense symmetric-definite generalized eigenproblems ``A v = lambda B' v``.

``B'`` is ``B`` shifted by a trace-scaled identity. The pencil is reduced with a
Cholesky factor of ``B'`` to a standard symmetric problem, solved densely and
back-substituted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg


class ConditioningError(np.linalg.LinAlgError):
    pass


def _symmetric(M, name, tol=1e-10):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    scale = max(np.abs(M).max(initial=0.0), np.finfo(float).tiny)
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise ValueError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class GeneralizedEigenProblem:
    A: np.ndarray
    B: np.ndarray
    theta: float = 0.0

    def __post_init__(self):
        A = _symmetric(self.A, "A")
        B = _symmetric(self.B, "B")
        if A.shape != B.shape:
            raise ValueError(f"A and B differ in shape: {A.shape} vs {B.shape}")
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def size(self) -> int:
        return self.A.shape[0]

    @property
    def B_reg(self) -> np.ndarray:
        return regularize(self.B, self.theta, self.size)


def regularize(B: np.ndarray, theta: float, m: int | None = None) -> np.ndarray:
    """``B + theta * tr(B) / m * I``."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    B = np.asarray(B, dtype=np.float64)
    if theta == 0:
        return B.copy()
    m = B.shape[0] if m is None else m
    return B + (theta * np.trace(B) / m) * np.eye(B.shape[0])


def fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    V = np.array(V, dtype=np.float64, copy=True)
    if V.size == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def smallest_eigenvectors(problem: GeneralizedEigenProblem, r: int):
    """Eigenvalues (ascending) and B'-orthonormal eigenvectors of the r smallest eigenpairs."""
    m = problem.size
    if not 1 <= r <= m:
        raise ValueError(f"requested {r} eigenvectors of a size-{m} pencil")
    Bp = problem.B_reg
    try:
        C = linalg.cholesky(Bp, lower=True)
    except linalg.LinAlgError as exc:
        raise ConditioningError("B' is not positive definite; increase theta") from exc
    # C^{-1} A C^{-T}
    T = linalg.solve_triangular(C, problem.A, lower=True)
    S = linalg.solve_triangular(C, T.T, lower=True)
    S = 0.5 * (S + S.T)
    w, Y = linalg.eigh(S, subset_by_index=[0, r - 1])
    V = linalg.solve_triangular(C.T, Y, lower=False)
    # the reduced problem loses relative accuracy on tiny eigenvalues;
    # Rayleigh quotients on the original pencil recover it
    w = np.einsum("ij,ij->j", V, problem.A @ V) / np.einsum("ij,ij->j", V, Bp @ V)
    order = np.argsort(w, kind="stable")
    return w[order], fix_signs(V[:, order])
