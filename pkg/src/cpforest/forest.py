"""From-scratch random forest emitting averaged per-class posterior probabilities.

Trees are grown on bootstrap samples with Gini splits over a fresh random
feature subset at every node, to purity by default (no depth limit, no
pruning). A leaf stores the class counts of the bootstrap instances that
reach it; a tree's posterior is the count ratio at the leaf and the forest
posterior is the plain average over trees.

The growth and traversal loops are JIT-compiled; all randomness inside the
kernel comes from a splitmix64 stream, so a tree is a pure function of
(data, parameters, seed).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .data import DataError, Dataset

_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)

# Minimum weighted-Gini improvement for a split to count as improving.
_MIN_GAIN = 1e-12


@njit(cache=True, nogil=True)
def _next_u64(state):
    state = state + _SM_GAMMA
    z = state
    z = (z ^ (z >> np.uint64(30))) * _SM_M1
    z = (z ^ (z >> np.uint64(27))) * _SM_M2
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True, nogil=True)
def _grow(X, y, mtry, min_leaf, seed, bootstrap):
    n, d = X.shape
    state = seed

    idx = np.empty(n, np.int64)
    if bootstrap:
        for i in range(n):
            state, z = _next_u64(state)
            idx[i] = np.int64(z % np.uint64(n))
    else:
        for i in range(n):
            idx[i] = i

    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap, np.float64)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    counts = np.zeros((cap, 2), np.int64)

    stack_node = np.empty(cap, np.int64)
    stack_lo = np.empty(cap, np.int64)
    stack_hi = np.empty(cap, np.int64)
    top = 0
    stack_node[0], stack_lo[0], stack_hi[0] = 0, 0, n
    n_nodes = 1

    perm = np.empty(d, np.int64)
    buf = np.empty(n, np.int64)
    vals = np.empty(n, np.float64)

    while top >= 0:
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        top -= 1
        m = hi - lo

        c1 = 0
        for i in range(lo, hi):
            c1 += y[idx[i]]
        c0 = m - c1
        counts[node, 0] = c0
        counts[node, 1] = c1
        if c0 == 0 or c1 == 0 or m < 2 * min_leaf:
            continue

        # mtry distinct candidate features, evaluated in ascending order so
        # Gini ties resolve to the lowest feature index.
        k = mtry if mtry < d else d
        for j in range(d):
            perm[j] = j
        for j in range(k):
            state, z = _next_u64(state)
            r = j + np.int64(z % np.uint64(d - j))
            perm[j], perm[r] = perm[r], perm[j]
        for a in range(1, k):
            v = perm[a]
            b = a - 1
            while b >= 0 and perm[b] > v:
                perm[b + 1] = perm[b]
                b -= 1
            perm[b + 1] = v

        # Maximize sum of squared class counts over child size; equivalent to
        # minimizing weighted Gini. Ties keep the first (lowest threshold).
        parent = (c0 * c0 + c1 * c1) / m
        best = parent + _MIN_GAIN
        best_f = -1
        best_t = 0.0
        for j in range(k):
            f = perm[j]
            for i in range(m):
                vals[i] = X[idx[lo + i], f]
            order = np.argsort(vals[:m])
            l0 = 0
            l1 = 0
            for i in range(m - 1):
                o = order[i]
                lab = y[idx[lo + o]]
                l1 += lab
                l0 += 1 - lab
                vi = vals[o]
                vnext = vals[order[i + 1]]
                if vi < vnext and i + 1 >= min_leaf and m - i - 1 >= min_leaf:
                    nl = i + 1
                    nr = m - nl
                    r0 = c0 - l0
                    r1 = c1 - l1
                    score = (l0 * l0 + l1 * l1) / nl + (r0 * r0 + r1 * r1) / nr
                    if score > best:
                        best = score
                        best_f = f
                        t = vi + (vnext - vi) / 2.0
                        if t >= vnext:  # midpoint rounded up to the right value
                            t = vi
                        best_t = t
        if best_f < 0:
            continue

        nl = 0
        for i in range(lo, hi):
            if X[idx[i], best_f] <= best_t:
                buf[nl] = idx[i]
                nl += 1
        nr = nl
        for i in range(lo, hi):
            if X[idx[i], best_f] > best_t:
                buf[nr] = idx[i]
                nr += 1
        for i in range(m):
            idx[lo + i] = buf[i]

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_t
        left[node] = lid
        right[node] = rid
        top += 1
        stack_node[top], stack_lo[top], stack_hi[top] = lid, lo, lo + nl
        top += 1
        stack_node[top], stack_lo[top], stack_hi[top] = rid, lo + nl, hi

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        counts[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def _apply(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@dataclass(frozen=True)
class DecisionTree:
    """Array-encoded binary tree. feature[i] == -1 marks node i as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def leaf_ids(self, X: np.ndarray) -> np.ndarray:
        return _apply(self.feature, self.threshold, self.left, self.right, np.ascontiguousarray(X))

    def posterior(self, X: np.ndarray) -> np.ndarray:
        """Per-row class probabilities: leaf class counts over leaf total."""
        c = self.counts[self.leaf_ids(X)].astype(np.float64)
        return c / c.sum(axis=1, keepdims=True)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DecisionTree":
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=np.float64),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["counts"], dtype=np.int64),
        )


def default_mtry(dim: int) -> int:
    return max(1, int(math.floor(math.sqrt(dim))))


def train_tree(
    proper_training: Dataset,
    mtry: int | None = None,
    seed: int = 0,
    min_leaf: int = 1,
    bootstrap: bool = True,
) -> DecisionTree:
    """Grow one tree on a bootstrap sample of the proper training set."""
    if proper_training.n == 0:
        raise DataError("cannot train a tree on an empty dataset")
    if proper_training.y is None:
        raise DataError("training data must be labelled")
    d = proper_training.dim
    mtry = default_mtry(d) if mtry is None else int(mtry)
    if not 1 <= mtry <= d:
        raise DataError(f"mtry must be in [1, {d}], got {mtry}")
    if min_leaf < 1:
        raise DataError(f"min_leaf must be >= 1, got {min_leaf}")
    arrays = _grow(
        np.ascontiguousarray(proper_training.X),
        proper_training.y.astype(np.int64),
        mtry,
        int(min_leaf),
        np.uint64(seed),
        bootstrap,
    )
    return DecisionTree(*arrays)


@dataclass(frozen=True)
class RandomForest:
    trees: tuple[DecisionTree, ...]
    mtry: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def posterior(self, X: np.ndarray) -> np.ndarray:
        """Average of the per-tree posteriors; rows sum to 1."""
        X = np.ascontiguousarray(np.atleast_2d(X))
        total = np.zeros((X.shape[0], 2))
        for tree in self.trees:
            total += tree.posterior(X)
        return total / self.n_trees

    def to_dict(self) -> dict:
        return {
            "format": "cpforest-forest",
            "version": 1,
            "mtry": self.mtry,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        if d.get("format") != "cpforest-forest" or d.get("version") != 1:
            raise DataError("unrecognized forest serialization format")
        return cls(tuple(DecisionTree.from_dict(t) for t in d["trees"]), int(d["mtry"]), int(d["seed"]))


def train_forest(
    proper_training: Dataset,
    n_trees: int = 100,
    seed: int = 0,
    mtry: int | None = None,
    min_leaf: int = 1,
    bootstrap: bool = True,
    jobs: int = 1,
) -> RandomForest:
    """Train `n_trees` trees with independent child seeds derived from `seed`."""
    if n_trees < 1:
        raise DataError(f"n_trees must be >= 1, got {n_trees}")
    mtry = default_mtry(proper_training.dim) if mtry is None else int(mtry)
    tree_seeds = np.random.SeedSequence(int(seed)).generate_state(n_trees, np.uint64)

    def build(t):
        return train_tree(proper_training, mtry=mtry, seed=int(tree_seeds[t]), min_leaf=min_leaf, bootstrap=bootstrap)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trees = tuple(pool.map(build, range(n_trees)))
    else:
        trees = tuple(build(t) for t in range(n_trees))
    return RandomForest(trees, mtry, int(seed))
