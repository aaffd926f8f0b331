"""Weighted k-means and the two model-aware clustering schemes built on it.

``model_based_tsc`` groups whole series by their local-model coefficient
vectors. ``weighted_instance_tsc`` groups pooled sample rows under a Euclidean
metric whose per-feature weights are a global model's importances:

    d(a, b) = sqrt(sum_r w_r * (a_r - b_r) ** 2)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.metrics import silhouette_score

from .errors import TrainingError
from .featurizer import FeatureSpec, SampleSet, build_samples
from .models import Hyperparams, fit_model, importance_vector
from .series_store import SeriesCollection

log = logging.getLogger(__name__)

MAX_EXPLICIT_ROWS = 2000


@dataclass
class WeightedKMeansResult:
    centroids: np.ndarray  # K x p
    labels: np.ndarray
    weights: np.ndarray
    inertia: float
    seed: int
    n_iter: int
    inertia_trace: List[float] = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.centroids)


def weighted_sq_dist(points, centroids, w) -> np.ndarray:
    """m x K matrix of squared weighted distances."""
    points = np.asarray(points, dtype=float)
    out = np.empty((len(points), len(centroids)))
    for k, c in enumerate(centroids):
        out[:, k] = ((points - c) ** 2) @ w
    return out


def _check_weights(w, p: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (p,):
        raise TrainingError(f"weight vector has shape {w.shape}, expected ({p},)")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise TrainingError("clustering weights must be finite and non-negative")
    if not np.any(w > 0):
        raise TrainingError("clustering weights are all zero")
    return w


def kmeanspp_init(sq_dist_to, m: int, K: int, rng: np.random.Generator) -> List[int]:
    """k-means++ seeding given ``sq_dist_to(i) -> squared distances of all points to point i``."""
    chosen = [int(rng.integers(m))]
    closest = sq_dist_to(chosen[0])
    for _ in range(1, K):
        total = closest.sum()
        if total > 0:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, m - 1)
        else:  # every point coincides with a seed
            idx = next(i for i in range(m) if i not in chosen)
        chosen.append(idx)
        closest = np.minimum(closest, sq_dist_to(idx))
    return chosen


def _fill_empty(labels: np.ndarray, dist_own: np.ndarray, K: int) -> np.ndarray:
    """Give every empty cluster the point farthest from its own centroid (from a cluster of size > 1)."""
    labels = labels.copy()
    dist_own = dist_own.copy()
    for k in range(K):
        counts = np.bincount(labels, minlength=K)
        if counts[k] > 0:
            continue
        movable = counts[labels] > 1
        cand = np.where(movable, dist_own, -np.inf)
        i = int(np.argmax(cand))
        labels[i] = k
        dist_own[i] = 0.0
    return labels


N_INIT = 10
TIE_RTOL = 1e-9


def _better(inertia: float, best: float) -> bool:
    """Strictly better beyond rounding noise, so equal optima keep the earliest restart."""
    return inertia < best - TIE_RTOL * abs(best)


def _lloyd(X, w, K, rng, max_iter):
    m = len(X)
    seeds = kmeanspp_init(lambda i: ((X - X[i]) ** 2) @ w, m, K, rng)
    centroids = X[seeds].copy()
    labels = None
    trace: List[float] = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d = weighted_sq_dist(X, centroids, w)
        new = np.argmin(d, axis=1)
        new = _fill_empty(new, d[np.arange(m), new], K)
        converged = labels is not None and np.array_equal(new, labels)
        labels = new
        centroids = np.array([X[labels == k].mean(axis=0) for k in range(K)])
        inertia = float(weighted_sq_dist(X, centroids, w)[np.arange(m), labels].sum())
        trace.append(inertia)
        if converged:
            break
    return centroids, labels, trace, n_iter


def weighted_kmeans(points, K: int, w=None, seed: int = 0, max_iter: int = 300, n_init: int = N_INIT) -> WeightedKMeansResult:
    """Lloyd iterations under the weighted metric with k-means++ seeding.

    ``n_init`` seedings are drawn in turn from one ``default_rng(seed)`` stream
    and the lowest final inertia wins (earliest restart on ties). Assignment
    ties go to the lowest cluster id; empty clusters are re-seeded with the
    point farthest from its centroid.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise TrainingError("points must be a 2-D array")
    m, p = X.shape
    if not 1 <= K <= m:
        raise TrainingError(f"K={K} out of range for {m} points")
    if n_init < 1:
        raise TrainingError("n_init must be >= 1")
    w = np.ones(p) if w is None else _check_weights(w, p)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        run = _lloyd(X, w, K, rng, max_iter)
        if best is None or _better(run[2][-1], best[2][-1]):
            best = run
    centroids, labels, trace, n_iter = best
    return WeightedKMeansResult(centroids, labels, w, trace[-1], seed, n_iter, trace)


# ------------------------------------------------- explicit-matrix route


def explicit_distance_matrix(X, w) -> np.ndarray:
    """Full M x M weighted distance matrix; verification only."""
    X = np.asarray(X, dtype=float)
    if len(X) > MAX_EXPLICIT_ROWS:
        raise TrainingError(f"explicit distance matrix limited to {MAX_EXPLICIT_ROWS} rows, got {len(X)}")
    w = _check_weights(w, X.shape[1])
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff**2) @ w)


def kmeans_from_distances(D, K: int, seed: int = 0, max_iter: int = 300, n_init: int = N_INIT) -> np.ndarray:
    """k-means driven only by a pairwise distance matrix.

    Point-to-centroid distances come from the identity
    ``||x - mean(C)||^2 = mean_j d(x, j)^2 - sum_{j,l in C} d(j, l)^2 / (2 |C|^2)``.
    Seeding, restarts and tie rules mirror ``weighted_kmeans``.
    """
    D2 = np.asarray(D, dtype=float) ** 2
    m = len(D2)
    if not 1 <= K <= m:
        raise TrainingError(f"K={K} out of range for {m} points")
    rng = np.random.default_rng(seed)
    best_labels, best_inertia = None, np.inf
    for _ in range(n_init):
        seeds = kmeanspp_init(lambda i: D2[:, i], m, K, rng)
        d = D2[:, seeds]
        labels = None
        for _ in range(max_iter):
            new = np.argmin(d, axis=1)
            new = _fill_empty(new, d[np.arange(m), new], K)
            if labels is not None and np.array_equal(new, labels):
                break
            labels = new
            d = np.empty((m, K))
            for k in range(K):
                members = np.flatnonzero(labels == k)
                within = D2[np.ix_(members, members)].sum() / (2.0 * len(members) ** 2)
                d[:, k] = D2[:, members].mean(axis=1) - within
        inertia = sum(D2[np.ix_(labels == k, labels == k)].sum() / (2.0 * np.sum(labels == k)) for k in range(K))
        if best_labels is None or _better(inertia, best_inertia):
            best_labels, best_inertia = labels, inertia
    return best_labels


# ------------------------------------------------------------ K selection


def select_k(points, w=None, ks: Sequence[int] = range(2, 7), seed: int = 0) -> int:
    """K with the best silhouette score (ties to the smaller K)."""
    X = np.asarray(points, dtype=float)
    w = np.ones(X.shape[1]) if w is None else _check_weights(w, X.shape[1])
    Xs = X * np.sqrt(w)
    best_k, best_score = None, -np.inf
    for k in ks:
        if k >= len(X):
            break
        labels = weighted_kmeans(X, k, w, seed).labels
        if len(np.unique(labels)) < 2:
            continue
        score = silhouette_score(Xs, labels)
        if score > best_score:
            best_k, best_score = k, score
    if best_k is None:
        raise TrainingError("could not select K: too few distinct points")
    return best_k


# ------------------------------------------------------ whole-series TSC


@dataclass
class SeriesClusters:
    assignment: Dict[str, int]
    ids: List[str]
    coefficients: np.ndarray  # n x p local importance vectors
    coef_mean: np.ndarray
    coef_scale: np.ndarray
    centroids: np.ndarray  # in standardized coefficient space
    K: int
    feature_names: Tuple[str, ...] = ()

    def assign(self, theta) -> int:
        """Nearest centroid for a new coefficient vector (ties to the lowest id)."""
        z = (np.asarray(theta, dtype=float) - self.coef_mean) / self.coef_scale
        return int(np.argmin(((self.centroids - z) ** 2).sum(axis=1)))

    def members(self, k: int) -> List[str]:
        return [s for s in self.ids if self.assignment[s] == k]


def local_importances(
    c: SeriesCollection, spec: FeatureSpec, model_kind: str, hp: Hyperparams = Hyperparams(), seed: int = 0, executor=None
) -> Tuple[np.ndarray, Tuple[str, ...]]:
    """Fit one local model per series and stack their importance vectors (rows in ``c.ids`` order)."""

    def one(sid):
        try:
            model = fit_model(build_samples(c, sid, spec), model_kind, hp, seed, paradigm="local")
        except Exception as exc:
            raise TrainingError(f"local fit failed for series {sid!r}: {exc}") from exc
        return importance_vector(model)

    results = list(executor.map(one, c.ids)) if executor is not None else [one(s) for s in c.ids]
    return np.vstack([r[0] for r in results]), results[0][1]


def model_based_tsc(
    c: SeriesCollection,
    spec: FeatureSpec,
    model_kind: str = "ridge",
    K: Optional[int] = 2,
    seed: int = 0,
    hp: Hyperparams = Hyperparams(),
    executor=None,
) -> SeriesClusters:
    """Cluster whole series on their column-standardized local coefficient vectors.

    ``c`` is the (normalized) training view. ``K=None`` picks K by silhouette.
    """
    theta, names = local_importances(c, spec, model_kind, hp, seed, executor)
    n = len(theta)
    mean = theta.mean(axis=0)
    scale = theta.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (theta - mean) / scale
    if K is None:
        K = select_k(Z, seed=seed, ks=range(2, min(6, n - 1) + 1))
    if not 1 <= K <= n:
        raise TrainingError(f"K={K} out of range for {n} series")
    result = weighted_kmeans(Z, K, np.ones(Z.shape[1]), seed)
    assignment = {sid: int(k) for sid, k in zip(c.ids, result.labels)}
    return SeriesClusters(assignment, list(c.ids), theta, mean, scale, result.centroids, K, names)


# ------------------------------------------------------------ instance TSC


@dataclass
class InstanceClusters:
    labels: np.ndarray  # per pooled row
    centroids: np.ndarray  # original feature space
    weights: np.ndarray  # non-negative, sums to 1
    K: int
    feature_names: Tuple[str, ...] = ()

    def route(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.weights):
            raise TrainingError(f"row has {X.shape[-1]} features, clusters expect {len(self.weights)}")
        return np.argmin(weighted_sq_dist(X, self.centroids, self.weights), axis=1)


def instance_weights(model, uniform: bool = False) -> np.ndarray:
    """Normalized non-negative weights from a fitted model (|coef| for ridge, gains for GBDT)."""
    theta, _ = importance_vector(model)
    if uniform:
        return np.full(len(theta), 1.0 / len(theta))
    w = np.abs(theta)
    total = w.sum()
    if not total > 0:
        raise TrainingError("global model has an all-zero importance vector")
    return w / total


def weighted_instance_tsc(
    pool: SampleSet, global_model, K: int = 2, seed: int = 0, uniform: bool = False, verify: bool = False
) -> InstanceClusters:
    """Cluster pooled rows under the importance-weighted metric.

    Runs on the weighted metric directly (equivalently, plain k-means on
    features scaled by sqrt(w)). With ``verify=True`` and at most
    ``MAX_EXPLICIT_ROWS`` rows the full distance matrix is also clustered and
    must agree.
    """
    if tuple(global_model.feature_names) != tuple(pool.feature_names):
        raise TrainingError("global model was fitted on a different feature schema")
    w = instance_weights(global_model, uniform)
    if not 1 <= K <= len(pool):
        raise TrainingError(f"K={K} out of range for {len(pool)} rows")
    result = weighted_kmeans(pool.X, K, w, seed)
    if verify:
        labels = kmeans_from_distances(explicit_distance_matrix(pool.X, w), K, seed)
        if not np.array_equal(labels, result.labels):
            raise TrainingError("explicit distance-matrix clustering disagrees with the weighted metric route")
    return InstanceClusters(result.labels, result.centroids, w, K, tuple(pool.feature_names))


def route_instance(clusters: InstanceClusters, x) -> int:
    x = np.asarray(x, dtype=float)
    return int(clusters.route(x.reshape(1, -1))[0])
