"""Projected distances, CMC curves, manifold-ranking re-ranking and the repeated
random-split experiment protocol."""

from __future__ import annotations

import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .data import ExperimentConfig, FeatureSet, Projection, split_by_ratio

log = logging.getLogger(__name__)

METHODS = ("fsl", "ssl", "mkfsl", "mkssl", "mkssl-mrank")
SUMMARY_RANKS = (1, 5, 10, 20)


@dataclass(frozen=True, eq=False)
class CmcCurve:
    rates: np.ndarray
    mode: str = "single_shot"
    n_probes: int = 0
    n_excluded: int = 0
    trials_mean: bool = False

    def at(self, rank: int) -> float:
        if rank < 1:
            raise ValueError("ranks start at 1")
        return float(self.rates[min(rank, len(self.rates)) - 1])


@dataclass(frozen=True, eq=False)
class RankingResult:
    order: np.ndarray
    scores: np.ndarray
    matching_mode: str = "single_shot"


def _as_matrix(x):
    return x.features if isinstance(x, FeatureSet) else np.asarray(x, dtype=np.float64)


def distances(projection: Optional[Projection], probes, gallery) -> np.ndarray:
    """Squared Euclidean distances between projected probes (rows) and gallery (columns).

    ``projection=None`` measures raw feature distances.
    """
    P, G = _as_matrix(probes), _as_matrix(gallery)
    if P.shape[0] != G.shape[0]:
        raise ValueError(f"probe dimension {P.shape[0]} != gallery dimension {G.shape[0]}")
    if projection is not None:
        P, G = projection.transform(P), projection.transform(G)
    return cdist(P.T, G.T, "sqeuclidean")


def rank_gallery(D: np.ndarray) -> np.ndarray:
    """Per-probe gallery order by ascending distance, ties broken by gallery index."""
    return np.argsort(np.asarray(D, dtype=np.float64), axis=1, kind="stable")


def _entity_keys(gallery_ids):
    g = np.asarray(gallery_ids, dtype=np.int64)
    # distractors (no person id) are each their own entity
    return np.where(g >= 0, g, -1 - np.arange(g.size))


def cmc_from_ranking(order, probe_ids, gallery_ids, mode: str = "single_shot") -> CmcCurve:
    order = np.asarray(order)
    probe_ids = np.asarray(probe_ids, dtype=np.int64)
    keys = _entity_keys(gallery_ids)
    G = keys.size
    if G == 0:
        raise ValueError("empty gallery")
    if mode not in ("single_shot", "multi_shot"):
        raise ValueError(f"unknown matching mode {mode!r}")
    n_entities = G if mode == "single_shot" else np.unique(keys).size
    counts = np.zeros(n_entities, dtype=np.int64)
    excluded = 0
    for p, pid in enumerate(probe_ids):
        ranked = keys[order[p]]
        hits = np.flatnonzero(ranked == pid) if pid >= 0 else np.empty(0, dtype=np.int64)
        if hits.size == 0:
            excluded += 1
            continue
        first = hits[0]
        if mode == "single_shot":
            rank = first
        else:
            rank = np.unique(ranked[:first]).size
        counts[rank] += 1
    used = probe_ids.size - excluded
    rates = np.cumsum(counts) / used if used else np.zeros(n_entities)
    return CmcCurve(rates, mode, used, excluded)


def cmc(D, probe_ids, gallery_ids, mode: str = "single_shot") -> CmcCurve:
    """Cumulative match rates from a probe x gallery distance matrix.

    In ``multi_shot`` mode a person's distance is the minimum over that person's
    gallery images and ranks count persons rather than images.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] == 0:
        raise ValueError("empty gallery")
    return cmc_from_ranking(rank_gallery(D), probe_ids, gallery_ids, mode)


def mean_curve(curves) -> CmcCurve:
    curves = list(curves)
    if not curves:
        raise ValueError("no curves to average")
    n = min(len(c.rates) for c in curves)
    rates = np.mean([c.rates[:n] for c in curves], axis=0)
    return CmcCurve(rates, curves[0].mode, sum(c.n_probes for c in curves), sum(c.n_excluded for c in curves), True)


def manifold_rerank(D_probe_gallery, D_gallery_gallery, alpha: float = 0.95, k_graph: int = 10) -> RankingResult:
    """Re-rank gallery candidates by manifold ranking on a gallery KNN graph.

    Both inputs are squared learned-space distances. The graph uses Gaussian
    affinities with bandwidth equal to the mean k-NN distance; each probe's
    initial scores are its Gaussian affinities to the gallery, and the ranking
    score is ``(I - alpha * S)^{-1} y`` with ``S`` the symmetrically normalized
    affinity matrix, divided elementwise by ``(I - alpha * S)^{-1} 1``. The
    division removes the part of the score that favors well-connected gallery
    items for every probe alike, and is exactly 1 at ``alpha = 0``.
    """
    Dpg = np.asarray(D_probe_gallery, dtype=np.float64)
    Dgg = np.asarray(D_gallery_gallery, dtype=np.float64)
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1)")
    if k_graph < 1:
        raise ValueError("k_graph must be >= 1")
    G = Dgg.shape[0]
    if Dgg.shape != (G, G) or Dpg.shape[1] != G:
        raise ValueError("distance matrix shapes do not match")
    Dgg = np.maximum(0.5 * (Dgg + Dgg.T), 0.0)
    k = min(k_graph, G - 1)
    W = np.zeros((G, G))
    if k >= 1:
        off = Dgg + np.diag(np.full(G, np.inf))
        nbrs = np.argsort(off, axis=1, kind="stable")[:, :k]
        knn_d = np.take_along_axis(off, nbrs, axis=1)
        sigma2 = float(np.mean(np.sqrt(knn_d))) ** 2
        sigma2 = sigma2 if sigma2 > 0 else 1.0
        rows = np.repeat(np.arange(G), k)
        W[rows, nbrs.ravel()] = np.exp(-knn_d.ravel() / sigma2)
        W = np.maximum(W, W.T)
    else:
        sigma2 = float(np.mean(Dpg)) or 1.0
    deg = np.maximum(W.sum(axis=1), 1e-12)
    inv_sqrt = 1.0 / np.sqrt(deg)
    S = W * inv_sqrt[:, None] * inv_sqrt[None, :]
    Y = np.exp(-(Dpg - Dpg.min(axis=1, keepdims=True)) / sigma2)
    F = linalg.solve(np.eye(G) - alpha * S, np.column_stack([Y.T, np.ones(G)]), assume_a="sym").T
    F = F[:-1] / F[-1]
    order = np.empty(Dpg.shape, dtype=np.int64)
    idx = np.arange(G)
    for p in range(Dpg.shape[0]):
        order[p] = np.lexsort((idx, Dpg[p], -F[p]))
    return RankingResult(order, F)


# ---------------------------------------------------------------------------
# experiment protocol


@dataclass
class TrialResult:
    trial: int
    seed: tuple
    cmc: Optional[CmcCurve] = None
    baseline_cmc: Optional[CmcCurve] = None
    rank1_by_iter: list = field(default_factory=list)
    history: list = field(default_factory=list)
    iterations: int = 0
    converged: Optional[bool] = None
    n_labeled_persons: int = 0
    n_unlabeled: int = 0
    train_time: float = 0.0
    test_time: float = 0.0
    error: Optional[str] = None


@dataclass
class ExperimentReport:
    method: str
    config: ExperimentConfig
    trials: list

    @property
    def completed(self):
        return [t for t in self.trials if t.error is None]

    @property
    def mean_cmc(self) -> CmcCurve:
        return mean_curve(t.cmc for t in self.completed)

    @property
    def mean_baseline_cmc(self) -> Optional[CmcCurve]:
        curves = [t.baseline_cmc for t in self.completed if t.baseline_cmc is not None]
        return mean_curve(curves) if curves else None

    def rank1(self) -> float:
        return self.mean_cmc.at(1)

    def cmc_csv(self) -> str:
        done = self.completed
        n = len(self.mean_cmc.rates)
        buf = io.StringIO()
        buf.write("rank," + ",".join(f"trial_{t.trial}" for t in done) + ",mean\n")
        mean = self.mean_cmc.rates
        for r in range(n):
            vals = [repr(float(t.cmc.rates[r])) for t in done] + [repr(float(mean[r]))]
            buf.write(f"{r + 1}," + ",".join(vals) + "\n")
        return buf.getvalue()

    def history_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,iter,edges_changed,objective,rank1\n")
        for t in self.completed:
            for i, rec in enumerate(t.history):
                r1 = repr(float(t.rank1_by_iter[i])) if i < len(t.rank1_by_iter) else ""
                buf.write(f"{t.trial},{rec.t},{rec.edges_changed},{rec.objective!r},{r1}\n")
        return buf.getvalue()

    def timing_csv(self) -> str:
        buf = io.StringIO()
        buf.write("trial,train_seconds,test_seconds,iterations,converged,error\n")
        for t in self.trials:
            err = "" if t.error is None else t.error.replace(",", ";").replace("\n", " ")
            buf.write(f"{t.trial},{t.train_time:.6f},{t.test_time:.6f},{t.iterations},{t.converged},{err}\n")
        return buf.getvalue()

    def summary(self) -> str:
        rows = [(self.method, self.mean_cmc)]
        base = self.mean_baseline_cmc
        if base is not None:
            rows.insert(0, (self.method.replace("-mrank", "") + " (no rerank)", base))
        return summary_table(rows, header=f"ratio={self.config.ratio} trials={len(self.completed)}/{len(self.trials)}")


def summary_table(rows, header: str = "") -> str:
    """Plain-text CMC table with rank-1/5/10/20 columns in percent."""
    width = max([len("method")] + [len(name) for name, _ in rows])
    out = io.StringIO()
    if header:
        out.write(header + "\n")
    out.write("method".ljust(width) + "".join(f"{f'r={r}':>9}" for r in SUMMARY_RANKS) + "\n")
    for name, curve in rows:
        out.write(name.ljust(width) + "".join(f"{100 * curve.at(r):9.2f}" for r in SUMMARY_RANKS) + "\n")
    return out.getvalue()


def trial_seed(master: int, trial: int) -> tuple:
    return (int(master), int(trial))


def split_train_test(fs: FeatureSet, rng: np.random.Generator, mode: str = "two_view", multi_shot: bool = False):
    """Split identities 50/50; return train column indices and (probe, gallery) FeatureSets."""
    persons = fs.persons()
    if persons.size < 4:
        raise ValueError("need at least four identities to split train/test")
    perm = rng.permutation(persons)
    n_train = persons.size // 2
    train_p, test_p = perm[:n_train], perm[n_train:]
    train_idx = np.flatnonzero(np.isin(fs.person_id, train_p))
    test_mask = np.isin(fs.person_id, test_p)
    distractors = np.flatnonzero(fs.person_id < 0)
    probe_idx, gallery_idx = [], []
    if mode == "two_view":
        views = np.unique(fs.view_id)
        probe_view = views[0]
        for p in np.sort(test_p):
            cols = np.flatnonzero(test_mask & (fs.person_id == p))
            probe_idx.extend(cols[fs.view_id[cols] == probe_view].tolist())
            gal = cols[fs.view_id[cols] != probe_view]
            if gal.size and not multi_shot:
                gal = gal[[rng.integers(gal.size)]]
            gallery_idx.extend(gal.tolist())
    elif mode == "one_gallery_per_person":
        for p in np.sort(test_p):
            cols = np.flatnonzero(test_mask & (fs.person_id == p))
            pick = rng.integers(cols.size)
            gallery_idx.append(int(cols[pick]))
            probe_idx.extend(np.delete(cols, pick).tolist())
    else:
        raise ValueError(f"unknown split mode {mode!r}")
    gallery_idx = np.concatenate([np.asarray(gallery_idx, dtype=np.int64), distractors])
    probes = fs.subset(np.asarray(probe_idx, dtype=np.int64))
    gallery = fs.subset(gallery_idx)
    return train_idx, probes.with_tags(["probe"] * probes.n_samples), gallery.with_tags(["gallery"] * gallery.n_samples)


def fit_method(method: str, X_l, y_l, X_u, views_u, config: ExperimentConfig, keep_projections=False):
    """Train one of the named methods; returns ``(projection, state_or_None)``."""
    from .learner import (
        fit_kernelized,
        fit_supervised_linear,
        self_train,
    )

    if method == "fsl":
        proj = fit_supervised_linear(
            X_l, y_l, r=config.subspace_dim, rank_tol=config.rank_tol, center=config.center, ridge=config.ridge
        )
        return proj, None
    if method == "ssl":
        return self_train(X_l, y_l, X_u, views_u, config, keep_projections=keep_projections)
    if method == "mkfsl":
        n = X_l.shape[1]
        return fit_kernelized(X_l, y_l, np.zeros(n, dtype=np.int64), np.arange(n), config, return_state=True)
    if method in ("mkssl", "mkssl-mrank"):
        n, u = X_l.shape[1], X_u.shape[1]
        X = np.hstack([X_l, X_u])
        pids = np.concatenate([y_l, np.full(u, -1)])
        views = np.concatenate([np.zeros(n, dtype=np.int64), views_u])
        return fit_kernelized(X, pids, views, np.arange(n), config, return_state=True, keep_projections=keep_projections)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def evaluate(projection, probes: FeatureSet, gallery: FeatureSet, mode="single_shot", rerank=False, alpha=0.95, k_graph=10):
    """Baseline CMC, plus the re-ranked CMC when ``rerank`` is set."""
    Dpg = distances(projection, probes, gallery)
    base = cmc(Dpg, probes.person_id, gallery.person_id, mode)
    if not rerank:
        return base, None
    Dgg = distances(projection, gallery, gallery)
    ranking = manifold_rerank(Dpg, Dgg, alpha, k_graph)
    return base, cmc_from_ranking(ranking.order, probes.person_id, gallery.person_id, mode)


def run_trial(fs: FeatureSet, config: ExperimentConfig, trial: int, method: Optional[str] = None) -> TrialResult:
    method = method or config.method
    seed = trial_seed(config.rng_seed, trial)
    res = TrialResult(trial, seed)
    try:
        rng = np.random.default_rng(seed)
        train_idx, probes, gallery = split_train_test(fs, rng, config.split_mode, config.multi_shot)
        part = split_by_ratio(fs, config.ratio, int(rng.integers(2**63 - 1)), indices=train_idx)
        lab, unl = part.labeled_indices, part.unlabeled_indices
        X_l, y_l = fs.features[:, lab], fs.person_id[lab]
        X_u, v_u = fs.features[:, unl], fs.view_id[unl]
        res.n_labeled_persons = int(np.unique(y_l).size)
        res.n_unlabeled = int(unl.size)

        t0 = time.perf_counter()
        proj, state = fit_method(method, X_l, y_l, X_u, v_u, config, keep_projections=config.track_iterations)
        res.train_time = time.perf_counter() - t0

        mode = "multi_shot" if config.multi_shot else "single_shot"
        t0 = time.perf_counter()
        rerank = method == "mkssl-mrank"
        base, reranked = evaluate(proj, probes, gallery, mode, rerank, config.rerank_alpha, config.rerank_k)
        res.test_time = time.perf_counter() - t0
        res.cmc = reranked if rerank else base
        res.baseline_cmc = base if rerank else None

        if state is not None:
            res.iterations = state.iterations
            res.converged = state.converged
            res.history = [
                type(rec)(rec.t, rec.edges_changed, rec.objective, None) for rec in state.history
            ]
            if config.track_iterations:
                for rec in state.history:
                    c = cmc(distances(rec.projection, probes, gallery), probes.person_id, gallery.person_id, mode)
                    res.rank1_by_iter.append(c.at(1))
            if state.error:
                log.warning("trial %d: %s", trial, state.error)
        else:
            res.rank1_by_iter = [base.at(1)]
    except Exception as exc:  # a failed trial is recorded, not fatal
        log.exception("trial %d failed", trial)
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def run_experiment(fs: FeatureSet, config: ExperimentConfig, method: Optional[str] = None, jobs: int = 1) -> ExperimentReport:
    """Repeat the train/test protocol ``config.trials`` times and collect CMC curves."""
    method = method or config.method
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if fs.persons().size < 4:
        raise ValueError("experiments need person ids for at least four identities")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_trial, fs, config, t, method) for t in range(config.trials)]
            trials = [f.result() for f in futures]
    else:
        trials = [run_trial(fs, config, t, method) for t in range(config.trials)]
    trials.sort(key=lambda t: t.trial)
    report = ExperimentReport(method, config, trials)
    if not report.completed:
        raise RuntimeError("every trial failed: " + "; ".join(t.error for t in trials))
    return report
