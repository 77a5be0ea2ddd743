"""Subspace learners: supervised and graph-regularized semi-supervised projections,
their multi-kernel counterparts, and the self-training loop that alternates
cross-view KNN pseudo graphs with projection refits.

Every pencil is solved inside the span the solution can actually occupy: the
centered weighted training columns for linear projections and the numerical
range of the centered fused kernel for kernelized ones. Directions outside that
span, and the constant direction removed by centering, have a zero numerator
and would otherwise win the minimization with a meaningless zero eigenvalue.

``ridge`` adds a scaled squared norm of the projected training data to the
numerator. Without it a flexible kernel can map every connected component of
the pseudo graph to a single point at zero cost. The scaling makes the ridge
identical in the linear path and the kernel path with a linear kernel.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .data import ExperimentConfig, KernelContext, Projection
from .eigensolve import ConditioningError, GeneralizedEigenProblem, fix_signs, regularize, smallest_eigenvectors
from .graph import (
    GraphError,
    WeightMatrix,
    edge_change,
    empty_weights,
    knn_cross_view_weights,
    label_weights,
    laplacian,
)
from .kernels import build_bank, fuse, ideal_kernel, kernel_weights

log = logging.getLogger(__name__)

# B conditioning below which the linear path falls back to the trace-scaled shift
LINEAR_COND_LIMIT = 1e12
DEFAULT_THETA = 0.01


def _add_ridge(A: np.ndarray, ridge: float, scale: float, M: np.ndarray) -> np.ndarray:
    if ridge == 0 or not scale > 0:
        return A
    return A + (ridge * scale) * M


@dataclass(frozen=True)
class ObjectiveTerms:
    labeled_term: float
    unlabeled_term: float
    eta: float

    @property
    def total(self) -> float:
        return self.labeled_term + self.eta * self.unlabeled_term


@dataclass
class IterationRecord:
    t: int
    edges_changed: int
    objective: float
    projection: Optional[Projection] = None


@dataclass
class TrainState:
    current_projection: Projection
    current_Wu: WeightMatrix
    t: int = 0
    history: list = field(default_factory=list)
    converged: bool = False
    final_edges_changed: Optional[int] = None
    error: Optional[str] = None

    @property
    def iterations(self) -> int:
        return self.t


def default_subspace_dim(person_ids) -> int:
    persons = np.unique(np.asarray(person_ids))
    if persons.size < 2:
        raise ValueError(f"need at least two labeled persons, got {persons.size}")
    return int(persons.size - 1)


def _range_basis(Y: np.ndarray, rank_tol: float) -> np.ndarray:
    """Orthonormal basis of the column span of ``Y``."""
    U, s, _ = linalg.svd(Y, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        raise ValueError("training data span is empty")
    return U[:, s > rank_tol * s[0]]


def _psd_range_basis(K: np.ndarray, rank_tol: float) -> np.ndarray:
    """Eigenvectors of a PSD matrix whose eigenvalues clear ``rank_tol`` relative to the largest."""
    w, V = linalg.eigh(K)
    return V[:, w > rank_tol * w[-1]]


def _cap_dim(r: int, available: int) -> int:
    if r > available:
        warnings.warn(f"subspace dimension {r} exceeds the {available}-dimensional training span; using {available}")
        return available
    return r


def _pick_linear_theta(B: np.ndarray, theta: Optional[float]) -> float:
    if theta is not None:
        return theta
    w = linalg.eigvalsh(B)
    if w[0] <= w[-1] / LINEAR_COND_LIMIT:
        return DEFAULT_THETA
    return 0.0


def _has_edges(Wu) -> bool:
    return Wu is not None and bool(np.any(Wu.W))


def _linear_pencil(X_l, Ll, Dl, X_u=None, Lu=None, Du=None, eta=0.0):
    A = X_l @ Ll @ X_l.T
    B = X_l @ Dl @ X_l.T
    if X_u is not None and eta != 0:
        A = A + eta * (X_u @ Lu @ X_u.T)
        B = B + eta * (X_u @ Du @ X_u.T)
    return A, B


def _solve_linear(X_l, person_ids, X_u, Wu, eta, r, theta, rank_tol, center=True, ridge=0.0):
    X_l = np.asarray(X_l, dtype=np.float64)
    r = default_subspace_dim(person_ids) if r is None else int(r)
    lap_l = laplacian(label_weights(person_ids))
    use_u = X_u is not None and eta != 0 and _has_edges(Wu)
    if use_u:
        X_u = np.asarray(X_u, dtype=np.float64)
        lap_u = laplacian(Wu)
        span = np.hstack([X_l, X_u[:, np.diag(lap_u.D) > 0]])
    else:
        span = X_l
    mean = span.mean(axis=1, keepdims=True) if center else 0.0
    span = span - mean
    Q = _range_basis(span, rank_tol)
    if use_u:
        A, B = _linear_pencil(Q.T @ (X_l - mean), lap_l.L, lap_l.D, Q.T @ (X_u - mean), lap_u.L, lap_u.D, eta)
    else:
        A, B = _linear_pencil(Q.T @ (X_l - mean), lap_l.L, lap_l.D)
    r = _cap_dim(r, Q.shape[1])
    theta = _pick_linear_theta(B, theta)
    if ridge:
        S = Q.T @ span
        G = S @ S.T
        A_r = _add_ridge(A, ridge, np.sum(A * G) / np.trace(G), np.eye(A.shape[0]))
    else:
        A_r = A
    _, V = smallest_eigenvectors(GeneralizedEigenProblem(A_r, B, theta), r)
    U = fix_signs(Q @ V)
    objective = float(np.trace(V.T @ A @ V))
    return Projection("linear", U), objective


def fit_supervised_linear(X_l, person_ids, r=None, theta=None, rank_tol=1e-10, center=True, ridge=0.0) -> Projection:
    """Projection minimizing same-person projected distances of the labeled data.

    ``theta=None`` adds the trace-scaled shift only when the scatter matrix is
    numerically singular.
    """
    return _solve_linear(X_l, person_ids, None, None, 0.0, r, theta, rank_tol, center, ridge)[0]


def fit_semi_supervised_linear(
    X_l, person_ids, X_u, Wu, eta=1.0, r=None, theta=None, rank_tol=1e-10, center=True, ridge=0.0
) -> Projection:
    if Wu is not None and Wu.size != np.asarray(X_u).shape[1]:
        raise GraphError(f"pseudo graph has {Wu.size} nodes for {np.asarray(X_u).shape[1]} unlabeled samples")
    return _solve_linear(X_l, person_ids, X_u, Wu, eta, r, theta, rank_tol, center, ridge)[0]


def objective(X_l, X_u, U, Wl, Wu, eta) -> ObjectiveTerms:
    U = np.asarray(U, dtype=np.float64)
    Zl = U.T @ np.asarray(X_l, dtype=np.float64)
    lab = float(np.trace(Zl @ laplacian(Wl).L @ Zl.T))
    unl = 0.0
    if X_u is not None and Wu is not None and Wu.size:
        Zu = U.T @ np.asarray(X_u, dtype=np.float64)
        unl = float(np.trace(Zu @ laplacian(Wu).L @ Zu.T))
    return ObjectiveTerms(lab, unl, eta)


def _run_self_training(
    refit: Callable,
    embed_unlabeled: Callable,
    view_ids_u: np.ndarray,
    u: int,
    k: int,
    max_iters: int,
    stop_tolerance: float,
    keep_projections: bool = True,
):
    proj, obj = refit(None)
    state = TrainState(proj, empty_weights(u))
    state.history.append(IterationRecord(0, 0, obj, proj if keep_projections else None))
    log.info("iter=0 edges_changed=0 objective=%.10g", obj)
    if u == 0:
        state.converged = True
        return proj, state
    views = np.asarray(view_ids_u)
    if np.unique(views).size < 2:
        raise ValueError("self-training needs unlabeled samples from at least two views")
    pools = [np.sum(views != v) for v in np.unique(views)]
    if min(pools) < k:
        msg = f"too few unlabeled samples for k={k} cross-view neighbors; returning the supervised projection"
        warnings.warn(msg)
        state.error = msg
        return proj, state

    prev = None
    for t in range(1, max_iters + 1):
        Wu = knn_cross_view_weights(embed_unlabeled(state.current_projection), views, k)
        if prev is None:
            changed = len(Wu.edges())
        else:
            changed, union = edge_change(prev, Wu)
            if changed == 0 or changed <= stop_tolerance * union:
                state.converged = True
                state.final_edges_changed = changed
                break
        try:
            proj, obj = refit(Wu)
        except ConditioningError as exc:
            if t == 1:
                state.error = f"first self-training refit failed: {exc}"
                log.warning(state.error)
                return state.current_projection, state
            raise
        state.current_projection, state.current_Wu, state.t = proj, Wu, t
        state.history.append(IterationRecord(t, changed, obj, proj if keep_projections else None))
        log.info("iter=%d edges_changed=%d objective=%.10g", t, changed, obj)
        prev = Wu
    else:
        Wu = knn_cross_view_weights(embed_unlabeled(state.current_projection), views, k)
        changed, union = edge_change(prev, Wu)
        state.final_edges_changed = changed
        state.converged = changed == 0 or changed <= stop_tolerance * union
    return state.current_projection, state


def self_train(X_l, person_ids, X_u, view_ids, config: ExperimentConfig, keep_projections=True):
    """Self-trained linear subspace learning.

    ``view_ids`` are the camera ids of the unlabeled columns ``X_u``. Returns the
    final projection and the ``TrainState`` with the per-iteration history.
    """
    X_l = np.asarray(X_l, dtype=np.float64)
    X_u = np.zeros((X_l.shape[0], 0)) if X_u is None else np.asarray(X_u, dtype=np.float64)
    r = config.subspace_dim if config.subspace_dim is not None else default_subspace_dim(person_ids)

    def refit(Wu):
        return _solve_linear(X_l, person_ids, X_u, Wu, config.eta, r, None, config.rank_tol, config.center, config.ridge)

    return _run_self_training(
        refit,
        lambda p: p.transform(X_u),
        view_ids,
        X_u.shape[1],
        config.k_neighbors,
        config.max_iters,
        config.stop_tolerance,
        keep_projections,
    )


def _solve_kernel(fused, Kc, H, basis, lap_l, Wu, eta, r, theta, ridge):
    Kl = Kc[:, fused.labeled]
    A = Kl @ lap_l.L @ Kl.T
    B = Kl @ lap_l.D @ Kl.T
    if _has_edges(Wu) and eta != 0:
        Ku = Kc[:, fused.unlabeled]
        lap_u = laplacian(Wu)
        A = A + eta * (Ku @ lap_u.L @ Ku.T)
        B = B + eta * (Ku @ lap_u.D @ Ku.T)
    Bp = regularize(0.5 * (B + B.T), theta, B.shape[0])
    Aq = basis.T @ A @ basis
    Bq = basis.T @ Bp @ basis
    Kq = basis.T @ Kc @ basis
    A_r = _add_ridge(Aq, ridge, np.trace(Aq) / np.trace(Kq), Kq) if ridge else Aq
    _, V = smallest_eigenvectors(GeneralizedEigenProblem(0.5 * (A_r + A_r.T), 0.5 * (Bq + Bq.T), 0.0), r)
    P = basis @ V
    if H is not None:
        # centered kernel columns differ from raw ones by a shift, so distances agree
        P = H @ P
    return fix_signs(P), float(np.trace(V.T @ Aq @ V))


def fit_kernelized(X_full, person_ids, view_ids, labeled_indices, config: ExperimentConfig, return_state=False, keep_projections=True):
    """Multi-kernel self-trained projection over all training columns of ``X_full``.

    Columns not in ``labeled_indices`` are treated as unlabeled. The kernel bank
    and its alignment weights are computed once; each refit solves the kernelized
    pencil with the regularized right-hand side.
    """
    X_full = np.asarray(X_full, dtype=np.float64)
    m = X_full.shape[1]
    l = np.asarray(labeled_indices, dtype=np.int64)
    u = np.setdiff1d(np.arange(m), l)
    pids = np.asarray(person_ids).reshape(-1)
    views = np.asarray(view_ids).reshape(-1)
    y_l = pids[l]
    r = config.subspace_dim if config.subspace_dim is not None else default_subspace_dim(y_l)

    bank = build_bank(X_full, config.c_grid, config.kernel)
    beta = kernel_weights(bank, ideal_kernel(y_l), l)
    fused = fuse(bank, beta, l, u)
    if config.center:
        H = np.eye(m) - 1.0 / m
        Kc = H @ fused.K @ H
        Kc = 0.5 * (Kc + Kc.T)
    else:
        H, Kc = None, fused.K
    basis = _psd_range_basis(Kc, config.rank_tol)
    r = _cap_dim(r, basis.shape[1])
    lap_l = laplacian(label_weights(y_l))
    ctx = KernelContext(X_full, bank.kind, bank.mu, bank.params, beta)
    K_u = fused.K_u

    def refit(Wu):
        P, obj = _solve_kernel(fused, Kc, H, basis, lap_l, Wu, config.eta, r, config.theta, config.ridge)
        return Projection("kernelized", P, ctx), obj

    proj, state = _run_self_training(
        refit,
        lambda p: p.basis.T @ K_u,
        views[u],
        u.size,
        config.k_neighbors,
        config.max_iters,
        config.stop_tolerance,
        keep_projections,
    )
    return (proj, state) if return_state else proj


def fit_kernelized_supervised(X_l, person_ids, config: ExperimentConfig) -> Projection:
    """Kernelized projection from labeled data alone (kernel bank over the labeled set only)."""
    X_l = np.asarray(X_l, dtype=np.float64)
    n = X_l.shape[1]
    return fit_kernelized(X_l, person_ids, np.zeros(n, dtype=np.int64), np.arange(n), config)
