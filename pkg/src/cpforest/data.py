"""Dataset container, deterministic seeding, stratified splits, and [0,1] scaling.

Everything here is shared plumbing: immutable datasets of labelled feature
vectors, seed derivation so that every randomized step is a pure function of
(inputs, seed), per-class sampling, the proper-training/calibration split,
and min-max normalization with training-set statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

BENIGN = 0
MALICIOUS = 1
LABEL_NAMES = ("benign", "malicious")


class DataError(ValueError):
    """Inputs violate a dataset contract (shapes, labels, counts)."""


def rng_from(seed: int, *path: int) -> np.random.Generator:
    """Generator for a namespaced stream under one root seed.

    Streams with distinct paths are independent, and extending a run with new
    path values never perturbs existing streams.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def spawn_seed(seed: int, *path: int) -> int:
    """Derived 64-bit child seed for the given path (same namespacing as rng_from)."""
    ss = np.random.SeedSequence([int(seed), *map(int, path)])
    return int(ss.generate_state(1, np.uint64)[0])


def _resolve_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return rng_from(int(seed))


def _frozen_array(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Instance:
    """One feature vector with an optional binary label and an opaque id."""

    features: np.ndarray
    label: int | None
    id: str


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of instances stored columnar: X (n, d), y (n,) or None."""

    X: np.ndarray
    y: np.ndarray | None
    ids: tuple[str, ...]
    feature_names: tuple[str, ...]

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {X.shape}")
        object.__setattr__(self, "X", _frozen_array(X))
        if self.y is not None:
            y = np.asarray(self.y, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise DataError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
            if y.size and not np.isin(y, (BENIGN, MALICIOUS)).all():
                raise DataError("labels must be 0 (benign) or 1 (malicious)")
            object.__setattr__(self, "y", _frozen_array(y))
        if len(self.ids) != X.shape[0]:
            raise DataError("ids length does not match number of rows")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("instance ids must be unique")
        if len(self.feature_names) != X.shape[1]:
            raise DataError("feature_names length does not match dimension")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def instance(self, i: int) -> Instance:
        label = None if self.y is None else int(self.y[i])
        return Instance(self.X[i], label, self.ids[i])

    def take(self, indices) -> "Dataset":
        """Subset by row indices, preserving order of `indices`."""
        idx = np.asarray(indices, dtype=np.int64)
        y = None if self.y is None else self.y[idx]
        return Dataset(self.X[idx], y, tuple(self.ids[i] for i in idx), self.feature_names)

    def class_indices(self, label: int) -> np.ndarray:
        if self.y is None:
            raise DataError("dataset has no labels")
        return np.flatnonzero(self.y == label)

    def class_counts(self) -> tuple[int, int]:
        return (int(self.class_indices(BENIGN).size), int(self.class_indices(MALICIOUS).size))


@dataclass(frozen=True)
class NormalizationParams:
    """Per-feature min/max learned on a training set."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mins", _frozen_array(np.asarray(self.mins, dtype=np.float64)))
        object.__setattr__(self, "maxs", _frozen_array(np.asarray(self.maxs, dtype=np.float64)))

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Affine map to [0,1]; constant features map to 0; values are clamped."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[1] != self.mins.size:
            raise DataError(f"dimension mismatch: params for {self.mins.size} features, data has {X.shape[1]}")
        span = self.maxs - self.mins
        safe = np.where(span > 0, span, 1.0)
        out = (X - self.mins) / safe
        out[:, span == 0] = 0.0
        return np.clip(out, 0.0, 1.0)


def normalize(
    train: Dataset, others: Sequence[Dataset] = ()
) -> tuple[Dataset, list[Dataset], NormalizationParams]:
    """Scale features to [0,1] using the training set's min/max only.

    Other datasets are transformed with the training parameters and clamped,
    so their values stay inside [0,1] even when they fall outside the training
    range.
    """
    if train.n == 0:
        raise DataError("cannot normalize an empty training set")
    for d in others:
        if d.dim != train.dim:
            raise DataError(f"dimension mismatch: train has {train.dim} features, other has {d.dim}")
    params = NormalizationParams(train.X.min(axis=0), train.X.max(axis=0))
    train_out = Dataset(params.transform(train.X), train.y, train.ids, train.feature_names)
    others_out = [
        Dataset(params.transform(d.X), d.y, d.ids, d.feature_names) for d in others
    ]
    return train_out, others_out, params


@dataclass(frozen=True)
class SplitPlan:
    """Disjoint index sets: proper training, calibration, and (optionally) test."""

    proper_training: np.ndarray
    calibration: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("proper_training", "calibration", "test"):
            arr = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, _frozen_array(arr))
        combined = np.concatenate([self.proper_training, self.calibration, self.test])
        if np.unique(combined).size != combined.size:
            raise DataError("split index sets must be pairwise disjoint")


def stratified_sample(
    data: Dataset, counts_per_class: Mapping[int, int], seed
) -> tuple[np.ndarray, np.ndarray]:
    """Draw exact per-class counts without replacement.

    Returns (selected, remainder) as sorted index arrays into `data`.
    """
    rng = _resolve_rng(seed)
    picked = []
    for label in sorted(counts_per_class):
        if label not in (BENIGN, MALICIOUS):
            raise DataError(f"unknown class label {label!r}")
        count = int(counts_per_class[label])
        if count < 0:
            raise DataError(f"negative count for class {LABEL_NAMES[label]}")
        pool = data.class_indices(label)
        if pool.size < count:
            raise DataError(
                f"class {LABEL_NAMES[label]}: requested {count} instances, only {pool.size} available"
            )
        if count:
            picked.append(rng.choice(pool, size=count, replace=False))
    selected = np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.int64)
    remainder = np.setdiff1d(np.arange(data.n, dtype=np.int64), selected)
    return selected, remainder


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def calibration_split(training: Dataset, fraction: float = 0.2, seed=0) -> SplitPlan:
    """Split training indices into proper training and calibration sets.

    Per class with n_k examples the calibration set receives
    round(fraction * n_k) - 1 examples, which makes each per-class score count
    plus one a round number for the default 20% fraction.
    """
    if not 0.0 < fraction < 1.0:
        raise DataError(f"fraction must be in (0,1), got {fraction}")
    rng = _resolve_rng(seed)
    calib_parts = []
    for label in (BENIGN, MALICIOUS):
        pool = training.class_indices(label)
        q_k = _round_half_up(fraction * pool.size) - 1
        if q_k < 1:
            raise DataError(
                f"class {LABEL_NAMES[label]}: calibration count {q_k} < 1 "
                f"({pool.size} training examples at fraction {fraction})"
            )
        calib_parts.append(rng.choice(pool, size=q_k, replace=False))
    calibration = np.sort(np.concatenate(calib_parts))
    proper = np.setdiff1d(np.arange(training.n, dtype=np.int64), calibration)
    return SplitPlan(proper, calibration, np.empty(0, dtype=np.int64))
