"""Gradient-boosted regression trees with squared loss and exact greedy splits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..errors import TrainingError
from ._tree_kernels import apply_forest, best_splits


@dataclass(frozen=True)
class Hyperparams:
    """Learner settings. ``n_estimators=None`` resolves per paradigm (200 local, 1000 pooled)."""

    alpha: float = 1.0
    n_estimators: Optional[int] = None
    learning_rate: float = 0.1
    max_depth: int = 4
    max_leaves: int = 32
    min_samples_leaf: int = 20

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.n_estimators is not None and self.n_estimators < 1:
            raise ValueError("n_estimators must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_depth < 1 or self.max_leaves < 2 or self.min_samples_leaf < 1:
            raise ValueError("max_depth, max_leaves and min_samples_leaf must be positive (max_leaves >= 2)")

    def estimators(self, paradigm: str = "global") -> int:
        if self.n_estimators is not None:
            return self.n_estimators
        return 200 if paradigm == "local" else 1000


@dataclass
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def depth(self) -> int:
        def walk(node):
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))

        return walk(0)

    def leaves(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            rows = np.flatnonzero(inner)
            go_left = X[rows, f[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    def predict(self, X) -> np.ndarray:
        return self.value[self.leaves(X)]


@dataclass
class GbdtModel:
    base: float
    trees: List[Tree]
    learning_rate: float
    hyperparams: Hyperparams
    gains: np.ndarray  # total split gain per feature
    feature_names: Tuple[str, ...] = ()
    train_loss: List[float] = field(default_factory=list)

    kind = "gbdt"

    @property
    def p(self) -> int:
        return len(self.gains)

    @property
    def importances(self) -> np.ndarray:
        total = self.gains.sum()
        return self.gains / total if total > 0 else np.zeros_like(self.gains)

    def _flat(self):
        offsets, acc = [], 0
        for t in self.trees:
            offsets.append(acc)
            acc += len(t.feature)
        if not self.trees:
            empty_i = np.zeros(0, dtype=np.int64)
            return empty_i, np.zeros(0), empty_i, empty_i, np.zeros(0), empty_i
        roots = np.asarray(offsets, dtype=np.int64)
        shift = np.repeat(roots, [len(t.feature) for t in self.trees])
        feature = np.concatenate([t.feature for t in self.trees]).astype(np.int64)
        left = np.concatenate([t.left for t in self.trees]).astype(np.int64) + shift
        right = np.concatenate([t.right for t in self.trees]).astype(np.int64) + shift
        threshold = np.concatenate([t.threshold for t in self.trees])
        value = np.concatenate([t.value for t in self.trees])
        return feature, threshold, left, right, value, roots

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} feature columns, got shape {X.shape}")
        feature, threshold, left, right, value, roots = self._flat()
        return apply_forest(X, feature, threshold, left, right, value, roots, self.base, self.learning_rate)


def _grow_tree(X, Xs, order, resid, hp: Hyperparams, gains: np.ndarray) -> Tuple[Tree, np.ndarray]:
    """Level-wise growth; within a level the largest gains split first until ``max_leaves``."""
    n = len(resid)
    feature, threshold, left, right = [-1], [0.0], [-1], [-1]
    leaf_of = np.zeros(n, dtype=np.int64)
    frontier = [0]
    n_leaves = 1
    for _ in range(hp.max_depth):
        if not frontier or n_leaves >= hp.max_leaves:
            break
        slot_lookup = np.full(len(feature), -1, dtype=np.int64)
        slot_lookup[frontier] = np.arange(len(frontier))
        slot_of = slot_lookup[leaf_of]
        best_f, best_t, best_g = best_splits(Xs, order, resid, slot_of, len(frontier), hp.min_samples_leaf)
        ranked = sorted((s for s in range(len(frontier)) if best_f[s] >= 0), key=lambda s: (-best_g[s], frontier[s]))
        next_frontier = []
        for s in ranked:
            if n_leaves >= hp.max_leaves:
                break
            node, f, thr = frontier[s], int(best_f[s]), float(best_t[s])
            lo, hi = len(feature), len(feature) + 1
            feature[node], threshold[node], left[node], right[node] = f, thr, lo, hi
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            rows = np.flatnonzero(leaf_of == node)
            leaf_of[rows] = np.where(X[rows, f] <= thr, lo, hi)
            gains[f] += best_g[s]
            n_leaves += 1
            next_frontier += [lo, hi]
        frontier = next_frontier

    n_nodes = len(feature)
    counts = np.bincount(leaf_of, minlength=n_nodes)
    sums = np.bincount(leaf_of, weights=resid, minlength=n_nodes)
    value = np.divide(sums, counts, out=np.zeros(n_nodes), where=counts > 0)
    # a rounded mean can land one ulp outside its members' range; pin it back
    lo = np.full(n_nodes, np.inf)
    hi = np.full(n_nodes, -np.inf)
    np.minimum.at(lo, leaf_of, resid)
    np.maximum.at(hi, leaf_of, resid)
    filled = counts > 0
    value[filled] = np.clip(value[filled], lo[filled], hi[filled])
    tree = Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=value,
    )
    return tree, leaf_of


def _presort(X):
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    return np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1)), order


def fit_tree(X, y, hp: Hyperparams = Hyperparams()) -> Tree:
    """One exact-greedy regression tree on raw targets; leaves hold member means."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise TrainingError(f"inconsistent shapes X{X.shape}, y{y.shape}")
    Xs, order = _presort(X)
    tree, _ = _grow_tree(X, Xs, order, y, hp, np.zeros(X.shape[1]))
    return tree


def fit_gbdt_arrays(X, y, hp: Hyperparams = Hyperparams(), seed: int = 0, feature_names=None, paradigm: str = "global") -> GbdtModel:
    """Stagewise boosting: ``F0 = mean(y)``, then one exact-greedy tree per stage on residuals.

    Boosting stops early once a stage finds no split with positive gain.
    ``seed`` is accepted for interface symmetry; fitting uses no randomness.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y):
        raise TrainingError(f"inconsistent shapes X{X.shape}, y{y.shape}")
    if len(y) < 2 * hp.min_samples_leaf:
        raise TrainingError(f"gbdt needs at least {2 * hp.min_samples_leaf} samples, got {len(y)}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise TrainingError("gbdt inputs contain non-finite values")

    base = float(y[0]) if np.ptp(y) == 0 else float(y.mean())
    Xs, order = _presort(X)
    F = np.full(len(y), base)
    gains = np.zeros(X.shape[1])
    trees: List[Tree] = []
    losses = [float(np.mean((y - F) ** 2))]
    for _ in range(hp.estimators(paradigm)):
        resid = y - F
        tree, leaf_of = _grow_tree(X, Xs, order, resid, hp, gains)
        if tree.n_leaves < 2:
            break
        trees.append(tree)
        F += hp.learning_rate * tree.value[leaf_of]
        losses.append(float(np.mean((y - F) ** 2)))

    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    return GbdtModel(base, trees, hp.learning_rate, hp, gains, names, losses)


def fit_gbdt(data, hp: Hyperparams = Hyperparams(), seed: int = 0, paradigm: str = "global") -> GbdtModel:
    return fit_gbdt_arrays(data.X, data.y, hp, seed, data.feature_names, paradigm)
