"""Bagged classification trees with out-of-bag permutation importance.

Binary Gini-split trees grown to purity on bootstrap resamples, with a random
feature subset considered at each split. Importance of a feature is the mean
increase in a tree's out-of-bag error when that feature's column is permuted,
divided by the standard deviation of the increase across trees.

The hot loops are JIT-compiled; all randomness that shapes results is drawn
either from one seeded generator (bootstraps, permutations) or from an inline
counter-based generator seeded per tree (feature subsets), so ensembles are
bit-reproducible and independent of compilation details.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateLabels, EmptyOob


@dataclass(frozen=True)
class EnsembleConfig:
    n_trees: int = 100
    n_iterations: int = 10
    max_features_per_split: int | None = None  # default: ceil(sqrt(n_features))
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise DegenerateLabels(f"n_trees must be >= 1, got {self.n_trees}")
        if self.n_iterations < 1:
            raise DegenerateLabels(
                f"n_iterations must be >= 1, got {self.n_iterations}"
            )


@dataclass
class Tree:
    feature: np.ndarray  # (n_nodes,) split feature, -1 at leaves
    threshold: np.ndarray  # (n_nodes,)
    left: np.ndarray  # (n_nodes,) child ids, -1 at leaves
    right: np.ndarray
    prediction: np.ndarray  # (n_nodes,) class at leaves, -1 elsewhere


@dataclass
class TreeEnsemble:
    trees: list[Tree]
    bootstrap_indices: np.ndarray  # (n_trees, n_samples)
    n_samples: int

    def oob_rows(self, tree_index: int) -> np.ndarray:
        mask = np.ones(self.n_samples, dtype=bool)
        mask[self.bootstrap_indices[tree_index]] = False
        return np.flatnonzero(mask)


@njit(cache=True)
def _splitmix64(state):
    state = (state + np.uint64(0x9E3779B97F4A7C15)) & np.uint64(0xFFFFFFFFFFFFFFFF)
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & np.uint64(
        0xFFFFFFFFFFFFFFFF
    )
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & np.uint64(
        0xFFFFFFFFFFFFFFFF
    )
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True)
def _rand_below(state, bound):
    state, z = _splitmix64(state)
    return state, z % np.uint64(bound)


@njit(cache=True)
def _co_sort(values, labels, size):
    """Sort values[:size] ascending, moving labels along. Iterative quicksort
    with middle pivot and insertion sort for small ranges."""
    stack_lo = np.empty(128, np.int64)
    stack_hi = np.empty(128, np.int64)
    top = 0
    stack_lo[0] = 0
    stack_hi[0] = size - 1
    while top >= 0:
        lo = stack_lo[top]
        hi = stack_hi[top]
        top -= 1
        while lo < hi:
            if hi - lo < 20:
                for i in range(lo + 1, hi + 1):
                    v = values[i]
                    lab = labels[i]
                    k = i - 1
                    while k >= lo and values[k] > v:
                        values[k + 1] = values[k]
                        labels[k + 1] = labels[k]
                        k -= 1
                    values[k + 1] = v
                    labels[k + 1] = lab
                break
            pivot = values[(lo + hi) // 2]
            a = lo - 1
            b = hi + 1
            while True:
                a += 1
                while values[a] < pivot:
                    a += 1
                b -= 1
                while values[b] > pivot:
                    b -= 1
                if a >= b:
                    break
                values[a], values[b] = values[b], values[a]
                labels[a], labels[b] = labels[b], labels[a]
            # loop on the smaller side, push the larger
            if b - lo < hi - b - 1:
                top += 1
                stack_lo[top] = b + 1
                stack_hi[top] = hi
                hi = b
            else:
                top += 1
                stack_lo[top] = lo
                stack_hi[top] = b
                lo = b + 1


@njit(cache=True)
def _build_tree(XT, y, sample_idx, max_features, min_leaf, seed):
    n = sample_idx.size
    n_features = XT.shape[0]
    max_nodes = 2 * n + 1
    feature = np.full(max_nodes, -1, np.int64)
    threshold = np.zeros(max_nodes, np.float64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    prediction = np.full(max_nodes, -1, np.int64)

    order = sample_idx.copy()
    buf = np.empty(n, np.int64)
    vals = np.empty(n, np.float64)
    labs = np.empty(n, np.int64)
    subset = np.arange(n_features)

    stack_node = np.empty(max_nodes, np.int64)
    stack_lo = np.empty(max_nodes, np.int64)
    stack_hi = np.empty(max_nodes, np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    n_nodes = 1
    state = np.uint64(seed)

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        top -= 1
        size = hi - lo

        ones = 0
        for i in range(lo, hi):
            ones += y[order[i]]
        zeros = size - ones

        if ones == 0 or zeros == 0 or size < 2 * min_leaf:
            prediction[node] = 1 if ones > zeros else 0
            continue

        # random feature subset: partial Fisher-Yates over all feature ids
        for j in range(n_features):
            subset[j] = j
        m = max_features if max_features < n_features else n_features
        for j in range(m):
            state, pick = _rand_below(state, n_features - j)
            k = j + int(pick)
            subset[j], subset[k] = subset[k], subset[j]

        parent = 1.0 - (ones / size) ** 2 - (zeros / size) ** 2
        best_gain = -1.0
        best_feature = -1
        best_threshold = 0.0
        for j in range(m):
            f = subset[j]
            for i in range(size):
                row = order[lo + i]
                vals[i] = XT[f, row]
                labs[i] = y[row]
            _co_sort(vals, labs, size)
            ones_prefix = 0
            for i in range(size - 1):
                ones_prefix += labs[i]
                if vals[i] == vals[i + 1]:
                    continue
                n_left = i + 1
                n_right = size - n_left
                if n_left < min_leaf or n_right < min_leaf:
                    continue
                l1 = ones_prefix
                l0 = n_left - l1
                r1 = ones - l1
                r0 = n_right - r1
                gini_left = 1.0 - (l1 / n_left) ** 2 - (l0 / n_left) ** 2
                gini_right = 1.0 - (r1 / n_right) ** 2 - (r0 / n_right) ** 2
                weighted = (n_left * gini_left + n_right * gini_right) / size
                gain = parent - weighted
                if gain > best_gain + 1e-15:
                    best_gain = gain
                    best_feature = f
                    best_threshold = (vals[i] + vals[i + 1]) / 2.0

        if best_feature < 0 or best_gain <= 0.0:
            prediction[node] = 1 if ones > zeros else 0
            continue

        n_left = 0
        n_right = 0
        for i in range(lo, hi):
            row = order[i]
            if XT[best_feature, row] <= best_threshold:
                buf[lo + n_left] = row
                n_left += 1
            else:
                n_right += 1
                buf[hi - n_right] = row
        for i in range(lo, hi):
            order[i] = buf[i]
        # right half was filled backwards; restore forward order
        a = lo + n_left
        b = hi - 1
        while a < b:
            order[a], order[b] = order[b], order[a]
            a += 1
            b -= 1

        feature[node] = best_feature
        threshold[node] = best_threshold
        left_id = n_nodes
        right_id = n_nodes + 1
        n_nodes += 2
        left[node] = left_id
        right[node] = right_id
        top += 1
        stack_node[top] = left_id
        stack_lo[top] = lo
        stack_hi[top] = lo + n_left
        top += 1
        stack_node[top] = right_id
        stack_lo[top] = lo + n_left
        stack_hi[top] = hi
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], prediction[:n_nodes]


@njit(cache=True)
def _predict_rows(feature, threshold, left, right, prediction, X, rows):
    out = np.empty(rows.size, np.int64)
    for i in range(rows.size):
        node = 0
        while feature[node] >= 0:
            if X[rows[i], feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = prediction[node]
    return out


@njit(cache=True)
def _permuted_error_counts(
    feature, threshold, left, right, prediction, X, rows, y, perms
):
    """Error count per feature when that feature's OOB column is permuted.

    perms[j, i] gives the position within ``rows`` whose value replaces row
    i's value for feature j. Rows whose decision path never reads feature j
    keep their unpermuted prediction; with at most 64 features the path's
    feature set fits a bitmask, skipping most re-traversals.
    """
    n_features = X.shape[1]
    n_rows = rows.size
    use_mask = n_features <= 64
    base_pred = np.empty(n_rows, np.int64)
    path_mask = np.zeros(n_rows, np.uint64)
    for i in range(n_rows):
        node = 0
        m = np.uint64(0)
        while feature[node] >= 0:
            f = feature[node]
            if use_mask:
                m |= np.uint64(1) << np.uint64(f)
            if X[rows[i], f] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        base_pred[i] = prediction[node]
        path_mask[i] = m
    errors = np.zeros(n_features, np.int64)
    for j in range(n_features):
        bit = np.uint64(1) << np.uint64(j)
        count = 0
        for i in range(n_rows):
            if use_mask and (path_mask[i] & bit) == np.uint64(0):
                pred = base_pred[i]
            else:
                node = 0
                while feature[node] >= 0:
                    f = feature[node]
                    if f == j:
                        v = X[rows[perms[j, i]], f]
                    else:
                        v = X[rows[i], f]
                    if v <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                pred = prediction[node]
            if pred != y[rows[i]]:
                count += 1
        errors[j] = count
    return errors


def _validate_xy(features: np.ndarray, labels: np.ndarray):
    X = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DegenerateLabels(
            f"features {X.shape} and labels {y.shape} are inconsistent"
        )
    present = np.unique(y)
    if not np.all(np.isin(present, (0, 1))):
        raise DegenerateLabels(f"labels must be 0/1, got values {present}")
    if present.size < 2:
        raise DegenerateLabels("both classes must be present")
    return X, y


def train_bagged_trees(
    features: np.ndarray, labels: np.ndarray, config: EnsembleConfig = EnsembleConfig()
) -> TreeEnsemble:
    """Grow the configured number of trees on bootstrap resamples."""
    X, y = _validate_xy(features, labels)
    n = X.shape[0]
    max_features = config.max_features_per_split
    if max_features is None:
        max_features = int(np.ceil(np.sqrt(X.shape[1])))
    rng = np.random.default_rng(config.seed)
    bootstrap = rng.integers(0, n, size=(config.n_trees, n), dtype=np.int64)
    tree_seeds = rng.integers(1, 2**63 - 1, size=config.n_trees, dtype=np.int64)
    XT = np.ascontiguousarray(X.T)  # feature-contiguous for the split scans
    trees = []
    for t in range(config.n_trees):
        arrays = _build_tree(
            XT, y, bootstrap[t], max_features, config.min_leaf, tree_seeds[t]
        )
        trees.append(Tree(*arrays))
    return TreeEnsemble(trees=trees, bootstrap_indices=bootstrap, n_samples=n)


def predict_majority(ensemble: TreeEnsemble, features: np.ndarray) -> np.ndarray:
    """Majority vote over all trees (ties go to class 1)."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    rows = np.arange(X.shape[0])
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for tree in ensemble.trees:
        votes += _predict_rows(
            tree.feature, tree.threshold, tree.left, tree.right, tree.prediction,
            X, rows,
        )
    return (votes * 2 >= len(ensemble.trees)).astype(np.int64)


def oob_error(ensemble: TreeEnsemble, features: np.ndarray, labels: np.ndarray) -> float:
    """Out-of-bag error: each sample voted on only by trees that missed it."""
    X, y = _validate_xy(features, labels)
    votes = np.zeros(X.shape[0], dtype=np.int64)
    counts = np.zeros(X.shape[0], dtype=np.int64)
    for t, tree in enumerate(ensemble.trees):
        rows = ensemble.oob_rows(t)
        if rows.size == 0:
            continue
        votes[rows] += _predict_rows(
            tree.feature, tree.threshold, tree.left, tree.right, tree.prediction,
            X, rows,
        )
        counts[rows] += 1
    seen = counts > 0
    if not np.any(seen):
        raise EmptyOob("no sample was ever out of bag")
    pred = (votes[seen] * 2 >= counts[seen]).astype(np.int64)
    return float(np.mean(pred != y[seen]))


def oob_importance(
    ensemble: TreeEnsemble,
    features: np.ndarray,
    labels: np.ndarray,
    seed: int = 0,
    identity_permutation: bool = False,
) -> np.ndarray:
    """Permutation importance per feature.

    For each tree with a non-empty out-of-bag set, the error increase from
    permuting each feature column (within the OOB rows) is recorded; the
    importance is the mean increase over trees divided by its standard
    deviation across trees (0 where the deviation is 0). All permutations come
    from one generator seeded here, drawn per tree in feature order.
    """
    X, y = _validate_xy(features, labels)
    n_features = X.shape[1]
    rng = np.random.default_rng(seed)
    diffs = []
    for t, tree in enumerate(ensemble.trees):
        rows = ensemble.oob_rows(t)
        if rows.size == 0:
            continue
        base_pred = _predict_rows(
            tree.feature, tree.threshold, tree.left, tree.right, tree.prediction,
            X, rows,
        )
        base_err = np.count_nonzero(base_pred != y[rows])
        if identity_permutation:
            perms = np.tile(np.arange(rows.size), (n_features, 1))
        else:
            perms = np.empty((n_features, rows.size), dtype=np.int64)
            for j in range(n_features):
                perms[j] = rng.permutation(rows.size)
        errs = _permuted_error_counts(
            tree.feature, tree.threshold, tree.left, tree.right, tree.prediction,
            X, rows, y, perms,
        )
        diffs.append((errs - base_err) / rows.size)
    if not diffs:
        raise EmptyOob("every tree saw all samples; importance undefined")
    stacked = np.vstack(diffs)
    mean = stacked.mean(axis=0)
    if stacked.shape[0] > 1:
        std = stacked.std(axis=0, ddof=1)
    else:
        std = np.zeros(n_features)
    out = np.zeros(n_features)
    nonzero = std > 0
    out[nonzero] = mean[nonzero] / std[nonzero]
    return out
