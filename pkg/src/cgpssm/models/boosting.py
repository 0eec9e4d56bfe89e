"""Minimal gradient-boosted trees for binary classification.

Second-order boosting on the logistic deviance: each tree is grown
depth-wise on quantile-binned features, leaves get the Newton value
``-G / (H + reg_lambda)`` scaled by the learning rate. A tree whose
contribution would raise the training deviance is shrunk by halving until
it does not.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, ParameterError

DEFAULT_GRID = {
    "max_depth": (2, 3, 4),
    "n_trees": (50, 100, 200),
    "learning_rate": (0.1, 0.3),
}

MAX_BINS = 64
MIN_CHILD_WEIGHT = 1e-3


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_loss(y, p):
    p = np.clip(p, 1e-15, 1 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))

        return walk(0)

    def predict(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while np.any(active):
            idx = np.flatnonzero(active)
            f = self.feature[node[idx]]
            go_left = X[idx, f] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class BoostedClassifier:
    trees: list
    learning_rate: float
    max_depth: int
    n_trees: int
    base_score: float
    feature_names: tuple = ()
    cv_scores: dict = field(default_factory=dict, repr=False)
    train_deviance: list = field(default_factory=list, repr=False)

    def decision_function(self, X, n_trees=None) -> np.ndarray:
        X = np.asarray(X, float)
        out = np.full(len(X), self.base_score)
        for tree in self.trees[: n_trees if n_trees is not None else len(self.trees)]:
            out += tree.predict(X)
        return out

    def predict_proba(self, X, n_trees=None) -> np.ndarray:
        return _expit(self.decision_function(X, n_trees))


def _bin_edges(X, max_bins):
    edges = []
    for j in range(X.shape[1]):
        qs = np.unique(np.quantile(X[:, j], np.linspace(0, 1, max_bins + 1)[1:-1]))
        edges.append(qs)
    return edges


def _binned(X, edges):
    return np.column_stack([np.searchsorted(e, X[:, j], side="left") for j, e in enumerate(edges)])


def _grow_tree(Xb, edges, g, h, max_depth, reg_lambda, learning_rate):
    n_feat = Xb.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    frontier = [(root, np.arange(len(g)))]
    for depth in range(max_depth + 1):
        next_frontier = []
        for node, rows in frontier:
            G, H = g[rows].sum(), h[rows].sum()
            value[node] = -learning_rate * G / (H + reg_lambda)
            if depth == max_depth or len(rows) < 2:
                continue
            parent_score = G * G / (H + reg_lambda)
            best = (0.0, None, None)
            for j in range(n_feat):
                nb = len(edges[j]) + 1
                if nb < 2:
                    continue
                bins = Xb[rows, j]
                gh = np.bincount(bins, weights=g[rows], minlength=nb)
                hh = np.bincount(bins, weights=h[rows], minlength=nb)
                gl, hl = np.cumsum(gh)[:-1], np.cumsum(hh)[:-1]
                gr, hr = G - gl, H - hl
                ok = (hl >= MIN_CHILD_WEIGHT) & (hr >= MIN_CHILD_WEIGHT)
                if not np.any(ok):
                    continue
                gain = gl**2 / (hl + reg_lambda) + gr**2 / (hr + reg_lambda) - parent_score
                gain = np.where(ok, gain, -np.inf)
                b = int(np.argmax(gain))
                if gain[b] > best[0] + 1e-12:
                    best = (gain[b], j, b)
            if best[1] is None:
                continue
            _, j, b = best
            mask = Xb[rows, j] <= b
            lnode, rnode = new_node(), new_node()
            feature[node], threshold[node] = j, float(edges[j][b])
            left[node], right[node] = lnode, rnode
            next_frontier += [(lnode, rows[mask]), (rnode, rows[~mask])]
        frontier = next_frontier
        if not frontier:
            break
    return Tree(
        np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(value)
    )


def train_boosted(X, y, n_trees, max_depth, learning_rate, reg_lambda=1.0, feature_names=()):
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    rate = y.mean()
    if rate <= 0 or rate >= 1:
        raise DataError("boosted classifier needs both classes in the response")
    base = float(np.log(rate / (1 - rate)))
    edges = _bin_edges(X, MAX_BINS)
    Xb = _binned(X, edges)
    margin = np.full(len(y), base)
    trees, dev_hist = [], [2 * len(y) * log_loss(y, _expit(margin))]
    for _ in range(n_trees):
        p = _expit(margin)
        g, h = p - y, np.maximum(p * (1 - p), 1e-16)
        tree = _grow_tree(Xb, edges, g, h, max_depth, reg_lambda, learning_rate)
        step = tree.predict(X)
        for _ in range(30):
            dev = 2 * len(y) * log_loss(y, _expit(margin + step))
            if dev <= dev_hist[-1]:
                break
            tree.value = tree.value * 0.5
            step = step * 0.5
        else:
            tree.value = tree.value * 0.0
            step = step * 0.0
            dev = dev_hist[-1]
        margin = margin + step
        trees.append(tree)
        dev_hist.append(dev)
    return BoostedClassifier(
        trees=trees,
        learning_rate=learning_rate,
        max_depth=max_depth,
        n_trees=n_trees,
        base_score=base,
        feature_names=tuple(feature_names),
        train_deviance=dev_hist,
    )


def fit_boosted_classifier(X, y, coords=None, hyper_grid=None, n_folds=10, seed=0,
                           feature_names=None) -> BoostedClassifier:
    """Grid search with stratified ``n_folds``-fold CV on held-out log-loss.

    Coordinates, when given, are appended as two extra split features.
    For each (max_depth, learning_rate) the largest ``n_trees`` is trained
    once per fold and smaller tree counts are scored on its prefix. The
    chosen grid point is then refit on all rows.
    """
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    if coords is not None:
        X = np.hstack([X, np.asarray(coords, float)])
    if len(np.unique(y)) < 2:
        raise DataError("boosted classifier needs both classes in the response")
    if n_folds < 2:
        raise ParameterError("n_folds must be >= 2")
    grid = dict(DEFAULT_GRID if hyper_grid is None else hyper_grid)
    depths = tuple(grid["max_depth"])
    sizes = tuple(sorted(grid["n_trees"]))
    rates = tuple(grid["learning_rate"])
    if feature_names is None:
        feature_names = [f"c{i}" for i in range(X.shape[1])]

    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=int)
    for cls_ in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == cls_))
        folds[idx] = np.arange(len(idx)) % n_folds

    losses = {key: [] for key in itertools.product(depths, sizes, rates)}
    for f in range(n_folds):
        test = folds == f
        train = ~test
        if len(np.unique(y[train])) < 2:
            continue
        for depth, rate in itertools.product(depths, rates):
            model = train_boosted(X[train], y[train], sizes[-1], depth, rate)
            for size in sizes:
                p = model.predict_proba(X[test], n_trees=size)
                losses[(depth, size, rate)].append(log_loss(y[test], p) * test.sum())
    n = len(y)
    scores = {key: float(np.sum(v)) / n for key, v in losses.items()}
    best = min(scores, key=lambda k: (scores[k], k))
    depth, size, rate = best
    final = train_boosted(X, y, size, depth, rate, feature_names=feature_names)
    final.cv_scores = scores
    return final
