# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""Regression trees and bagged random forests.

Trees split on the squared-error criterion; for a 0/1 target this grows
class-fraction leaves, so one implementation serves both the regression and
the probability task. Every tree draws from its own child of a SeedSequence,
which keeps a forest bit-identical for a given seed however many jobs grow it.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import joblib
import numpy as np

from sped_causal.data import ParameterError, make_folds

LOG = logging.getLogger(__name__)

TASKS = ("regression", "probability")
DEFAULT_N_TREES = 200
DEFAULT_MIN_LEAF = 5


def default_mtry(p: int, task: str) -> int:
    """ceil(sqrt(p)) for probability forests, ceil(p/3) for regression."""
    if task == "probability":
        return max(1, math.ceil(math.sqrt(p)))
    return max(1, math.ceil(p / 3))


@dataclass(frozen=True, eq=False)
class Tree:
    """Flattened binary tree; ``feature == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            current = node[rows]
            go_left = X[rows, self.feature[current]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Tree":
        return cls(
            feature=np.asarray(payload["feature"], dtype=np.int64),
            threshold=np.asarray(payload["threshold"], dtype=np.float64),
            left=np.asarray(payload["left"], dtype=np.int64),
            right=np.asarray(payload["right"], dtype=np.int64),
            value=np.asarray(payload["value"], dtype=np.float64),
        )


def _best_split(
    x: np.ndarray, y: np.ndarray, min_leaf: int
) -> Optional[Tuple[float, float]]:
    """Largest SSE reduction over midpoints between distinct sorted values."""
    order = np.argsort(x, kind="stable")
    xs, ys = x[order], y[order]
    n = ys.size
    left_n = np.arange(1, n)
    left_sum = np.cumsum(ys)[:-1]
    total = ys.sum()
    right_n = n - left_n
    gain = left_sum**2 / left_n + (total - left_sum) ** 2 / right_n
    valid = (xs[1:] > xs[:-1]) & (left_n >= min_leaf) & (right_n >= min_leaf)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    i = int(np.argmax(gain))
    return float(gain[i] - total**2 / n), float(0.5 * (xs[i] + xs[i + 1]))


def grow_tree(
    X: np.ndarray, y: np.ndarray, mtry: int, min_leaf: int, rng: np.random.Generator
) -> Tree:
    """Grow one unpruned CART tree with ``mtry`` candidate features per node."""
    p = X.shape[1]
    feature: List[int] = [-1]
    threshold: List[float] = [0.0]
    left: List[int] = [-1]
    right: List[int] = [-1]
    value: List[float] = [0.0]
    stack = [(0, np.arange(X.shape[0]))]
    while stack:
        node, rows = stack.pop()
        target = y[rows]
        value[node] = float(target[0]) if np.all(target == target[0]) else float(target.mean())
        if rows.size < 2 * min_leaf or np.all(target == target[0]):
            continue
        best = None
        for j in rng.choice(p, size=min(mtry, p), replace=False):
            split = _best_split(X[rows, j], target, min_leaf)
            if split is not None and split[0] > 0 and (best is None or split[0] > best[0]):
                best = (split[0], split[1], int(j))
        if best is None:
            continue
        _, thr, j = best
        go_left = X[rows, j] <= thr
        children = []
        for subset in (rows[go_left], rows[~go_left]):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            children.append(len(feature) - 1)
            stack.append((children[-1], subset))
        feature[node], threshold[node] = j, thr
        left[node], right[node] = children
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


def _grow_bagged(X, y, mtry, min_leaf, seed_seq) -> Tuple[Tree, np.ndarray]:
    rng = np.random.default_rng(seed_seq)
    sample = rng.integers(0, X.shape[0], size=X.shape[0])
    in_bag = np.zeros(X.shape[0], dtype=bool)
    in_bag[sample] = True
    return grow_tree(X[sample], y[sample], mtry, min_leaf, rng), ~in_bag


@dataclass(frozen=True, eq=False)
class RandomForestModel:
    """Bagged trees; predictions are the average over trees."""

    trees: Tuple[Tree, ...]
    task: str
    mtry: int
    min_leaf: int
    seed: int
    oob_prediction: np.ndarray = field(default_factory=lambda: np.empty(0))

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "mtry": self.mtry,
            "min_leaf": self.min_leaf,
            "seed": self.seed,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "RandomForestModel":
        return cls(
            trees=tuple(Tree.from_dict(t) for t in payload["trees"]),
            task=payload["task"],
            mtry=int(payload["mtry"]),
            min_leaf=int(payload["min_leaf"]),
            seed=int(payload["seed"]),
        )


def fit_random_forest(
    X: np.ndarray,
    y: np.ndarray,
    task: str = "regression",
    n_trees: int = DEFAULT_N_TREES,
    mtry: Optional[int] = None,
    min_leaf: int = DEFAULT_MIN_LEAF,
    seed: int = 0,
    n_jobs: int = 1,
) -> RandomForestModel:
    """Grow a random forest.

    Args:
        X: n x p covariates.
        y: outcome, or a 0/1 indicator for the probability task.
        task: "regression" or "probability".
        n_trees: number of bootstrap trees.
        mtry: candidate features per node, task default when None.
        min_leaf: minimum number of units in a leaf.
        seed: seed of the tree seed sequence.
        n_jobs: joblib workers growing trees.

    Returns:
        The fitted forest with out-of-bag predictions (NaN for units that
        were in every bootstrap sample).

    Raises:
        ParameterError: if n < min_leaf or the task is unknown.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if task not in TASKS:
        raise ParameterError(f"Unknown task {task!r}, expected one of {TASKS}")
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ParameterError("X must be n x p with one outcome per row")
    if min_leaf < 1 or X.shape[0] < min_leaf:
        raise ParameterError(f"Need at least min_leaf={min_leaf} units")
    if n_trees < 1:
        raise ParameterError("A forest needs at least one tree")
    p = X.shape[1]
    mtry = default_mtry(p, task) if mtry is None else min(max(1, mtry), max(p, 1))

    children = np.random.SeedSequence(seed).spawn(n_trees)
    grown = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_grow_bagged)(X, y, mtry, min_leaf, child) for child in children
    )
    oob_sum = np.zeros(X.shape[0])
    oob_count = np.zeros(X.shape[0])
    for tree, out_of_bag in grown:
        if out_of_bag.any():
            oob_sum[out_of_bag] += tree.predict(X[out_of_bag])
            oob_count[out_of_bag] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        oob = np.where(oob_count > 0, oob_sum / oob_count, np.nan)
    LOG.debug("Grew %d trees (mtry=%d, min_leaf=%d)", n_trees, mtry, min_leaf)
    return RandomForestModel(
        trees=tuple(tree for tree, _ in grown),
        task=task,
        mtry=mtry,
        min_leaf=min_leaf,
        seed=seed,
        oob_prediction=oob,
    )


def oob_mse(model: RandomForestModel, y: np.ndarray) -> float:
    """Out-of-bag mean squared error over units with an OOB prediction."""
    scored = ~np.isnan(model.oob_prediction)
    if not scored.any():
        return float("nan")
    return float(np.mean((np.asarray(y)[scored] - model.oob_prediction[scored]) ** 2))


def cross_validated_mse(
    X: np.ndarray, y: np.ndarray, cv_folds: int = 5, seed: int = 0, **params
) -> float:
    """Held-out mean squared error of forests grown on K-1 of ``cv_folds`` folds.

    The fold split uses ``seed``; the forest of fold k is grown with seed + k + 1.
    Remaining keyword arguments go to :func:`fit_random_forest`.

    :raises ParameterError: if fewer than two folds are requested
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    folds = min(cv_folds, n)
    if folds < 2:
        raise ParameterError(f"Cross-validation needs at least two folds, got {cv_folds}")
    squared = 0.0
    for k, train, test in make_folds(n, folds, seed=seed, stratify=False).splits():
        model = fit_random_forest(X[train], y[train], seed=seed + k + 1, **params)
        squared += float(((y[test] - model.predict(X[test])) ** 2).sum())
    return squared / n
