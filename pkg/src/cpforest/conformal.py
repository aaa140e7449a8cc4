"""Conformal prediction on top of forest posteriors.

Nonconformity of a (instance, class) pair is one minus the posterior
probability of that class. Calibration scores are compared against a test
score by counting, with ties included:

    p = (#{calibration scores >= test score} + 1) / (n + 1)

The label-conditional variant counts only calibration scores of the
hypothesized class, which makes the error guarantee hold per class rather
than just overall. Transductive variants that retrain on the extended
training set are provided as small-scale reference implementations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .data import BENIGN, MALICIOUS, DataError, Dataset
from .forest import RandomForest, train_forest

DENOMINATORS = ("plus_one", "literal")


def nonconformity(posterior: np.ndarray, label) -> np.ndarray | float:
    """1 - posterior[label]; accepts a single (2,) posterior or an (n, 2) batch."""
    post = np.asarray(posterior, dtype=np.float64)
    if post.ndim == 1:
        return float(1.0 - post[int(label)])
    labels = np.asarray(label, dtype=np.int64)
    return 1.0 - post[np.arange(post.shape[0]), labels]


def _count_ge(sorted_scores: np.ndarray, t) -> np.ndarray:
    """How many calibration scores are >= t (ties count)."""
    return sorted_scores.size - np.searchsorted(sorted_scores, t, side="left")


@dataclass(frozen=True)
class CalibrationScores:
    """Per-class ascending nonconformity scores from the calibration split."""

    by_class: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        frozen = []
        for label in (BENIGN, MALICIOUS):
            arr = np.sort(np.asarray(self.by_class[label], dtype=np.float64))
            arr.setflags(write=False)
            frozen.append(arr)
        object.__setattr__(self, "by_class", tuple(frozen))

    @property
    def pooled(self) -> np.ndarray:
        return np.sort(np.concatenate(self.by_class))

    def count(self, label: int) -> int:
        return self.by_class[label].size

    def to_dict(self) -> dict:
        return {"benign": self.by_class[BENIGN].tolist(), "malicious": self.by_class[MALICIOUS].tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationScores":
        return cls((np.array(d["benign"]), np.array(d["malicious"])))


def calibration_scores(posteriors: np.ndarray, labels: np.ndarray) -> CalibrationScores:
    """Score each calibration example against its true class and bucket by class."""
    labels = np.asarray(labels, dtype=np.int64)
    scores = nonconformity(posteriors, labels)
    return CalibrationScores((scores[labels == BENIGN], scores[labels == MALICIOUS]))


def icp_pvalue(calibration: np.ndarray, test_score) -> np.ndarray | float:
    """p-value against the pooled calibration scores: (#{>=} + 1) / (q + 1)."""
    calib = np.sort(np.asarray(calibration, dtype=np.float64))
    if calib.size == 0:
        raise DataError("calibration score set is empty")
    p = (_count_ge(calib, test_score) + 1) / (calib.size + 1)
    return float(p) if np.isscalar(test_score) else p


def lcmicp_pvalue(
    calib: CalibrationScores,
    label: int,
    test_score,
    denominator: str = "plus_one",
) -> np.ndarray | float:
    """p-value against calibration scores of one class only.

    The default denominator is n_label + 1, which keeps p-values in (0, 1];
    ``denominator="literal"`` divides by n_label instead, for comparison.
    """
    if denominator not in DENOMINATORS:
        raise DataError(f"denominator must be one of {DENOMINATORS}")
    bucket = calib.by_class[int(label)]
    if bucket.size == 0:
        raise DataError(f"no calibration scores for class {label}")
    den = bucket.size + 1 if denominator == "plus_one" else bucket.size
    p = (_count_ge(bucket, test_score) + 1) / den
    return float(p) if np.isscalar(test_score) else p


def mondrian_calibration(scores: np.ndarray, categories: np.ndarray) -> dict:
    """Bucket calibration scores by an arbitrary taxonomy's categories."""
    scores = np.asarray(scores, dtype=np.float64)
    categories = np.asarray(categories)
    return {c: np.sort(scores[categories == c]) for c in np.unique(categories)}


def mondrian_pvalue(by_category: Mapping, category, test_score, denominator: str = "plus_one"):
    """p-value within one category's bucket; same counting as lcmicp_pvalue."""
    if category not in by_category:
        raise DataError(f"no calibration scores for category {category!r}")
    bucket = np.asarray(by_category[category], dtype=np.float64)
    if bucket.size == 0:
        raise DataError(f"no calibration scores for category {category!r}")
    den = bucket.size + 1 if denominator == "plus_one" else bucket.size
    p = (_count_ge(bucket, test_score) + 1) / den
    return float(p) if np.isscalar(test_score) else p


def label_conditional(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """The shipped taxonomy: an example's category is its label."""
    return np.asarray(y)


def class_pvalues(
    calib: CalibrationScores,
    test_posteriors: np.ndarray,
    denominator: str = "plus_one",
) -> np.ndarray:
    """Label-conditional p-values for both hypothesized classes, shape (n, 2)."""
    post = np.atleast_2d(np.asarray(test_posteriors, dtype=np.float64))
    out = np.empty((post.shape[0], 2))
    for label in (BENIGN, MALICIOUS):
        out[:, label] = lcmicp_pvalue(calib, label, 1.0 - post[:, label], denominator)
    return out


def prediction_sets(pvalues: np.ndarray, delta) -> np.ndarray:
    """Boolean mask of retained labels: p(class) > delta (per-class delta allowed)."""
    p = np.atleast_2d(np.asarray(pvalues, dtype=np.float64))
    d = np.broadcast_to(np.asarray(delta, dtype=np.float64), (2,))
    if ((d < 0) | (d >= 1)).any():
        raise DataError(f"significance levels must be in [0,1), got {delta!r}")
    return p > d


@dataclass(frozen=True)
class ForcedPrediction:
    label: int
    confidence: float
    credibility: float


def forced_predictions(
    pvalues: np.ndarray, tie_break: int = BENIGN
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Single-label outputs: argmax-p label, 1 - other p-value, and max p-value.

    Equal p-values resolve to `tie_break` (benign by default).
    """
    p = np.atleast_2d(np.asarray(pvalues, dtype=np.float64))
    if tie_break == BENIGN:
        labels = (p[:, MALICIOUS] > p[:, BENIGN]).astype(np.int64)
    else:
        labels = (p[:, MALICIOUS] >= p[:, BENIGN]).astype(np.int64)
    confidence = 1.0 - p.min(axis=1)
    credibility = p.max(axis=1)
    return labels, confidence, credibility


def forced_prediction(pvalues, tie_break: int = BENIGN) -> ForcedPrediction:
    labels, conf, cred = forced_predictions(np.asarray(pvalues).reshape(1, 2), tie_break)
    return ForcedPrediction(int(labels[0]), float(conf[0]), float(cred[0]))


# ---------------------------------------------------------------------------
# Transductive reference implementations (retrain per test instance).

Scorer = Callable[[np.ndarray, np.ndarray], np.ndarray]


def one_nn_scorer(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Nonconformity for every pair: nearest same-class over nearest other-class distance."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    same = np.where(y[:, None] == y[None, :], dist, np.inf).min(axis=1)
    other = np.where(y[:, None] != y[None, :], dist, np.inf).min(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        scores = same / other
    return np.where(np.isnan(scores), 0.0, scores)


def tcp_pvalue(training: Dataset, x: np.ndarray, hypothesized: int, scorer: Scorer) -> float:
    """Transductive p-value: retrain on the extended set, rank the new pair's score."""
    X = np.vstack([training.X, np.asarray(x, dtype=np.float64).reshape(1, -1)])
    y = np.append(training.y, int(hypothesized))
    scores = np.asarray(scorer(X, y), dtype=np.float64)
    return float((np.count_nonzero(scores[:-1] >= scores[-1]) + 1) / scores.size)


def lcmcp_pvalue(training: Dataset, x: np.ndarray, hypothesized: int, scorer: Scorer) -> float:
    """Label-conditional transductive p-value: rank within the hypothesized class only."""
    X = np.vstack([training.X, np.asarray(x, dtype=np.float64).reshape(1, -1)])
    y = np.append(training.y, int(hypothesized))
    scores = np.asarray(scorer(X, y), dtype=np.float64)
    mask = y[:-1] == int(hypothesized)
    count = np.count_nonzero(scores[:-1][mask] >= scores[-1])
    return float((count + 1) / (np.count_nonzero(mask) + 1))


# ---------------------------------------------------------------------------
# End-to-end inductive pipeline.


@dataclass(frozen=True)
class ConformalForest:
    """Trained artifact: forest plus per-class calibration scores."""

    forest: RandomForest
    calibration: CalibrationScores
    denominator: str = "plus_one"
    tie_break: int = BENIGN

    def pvalues(self, X: np.ndarray) -> np.ndarray:
        return class_pvalues(self.calibration, self.forest.posterior(X), self.denominator)


@dataclass(frozen=True)
class PipelineResult:
    """Per-test outputs of one pipeline run."""

    pvalues: np.ndarray                  # (n, 2)
    deltas: tuple                        # significance levels, as given
    set_masks: tuple[np.ndarray, ...]    # one (n, 2) bool mask per delta
    forced_labels: np.ndarray            # (n,)
    confidence: np.ndarray               # (n,)
    credibility: np.ndarray              # (n,)


def predict_with(model: ConformalForest, tests: Dataset, deltas: Sequence = (0.05,)) -> PipelineResult:
    """Score test instances against an already-trained ConformalForest."""
    pvals = model.pvalues(tests.X) if tests.n else np.empty((0, 2))
    masks = tuple(prediction_sets(pvals, d) for d in deltas)
    labels, conf, cred = forced_predictions(pvals, model.tie_break)
    return PipelineResult(pvals, tuple(deltas), masks, labels, conf, cred)


def rf_lcmicp_pipeline(
    proper: Dataset,
    calib: Dataset,
    tests: Dataset,
    n_trees: int = 100,
    deltas: Sequence = (0.05,),
    seed: int = 0,
    mtry: int | None = None,
    min_leaf: int = 1,
    denominator: str = "plus_one",
    tie_break: int = BENIGN,
    jobs: int = 1,
) -> tuple[ConformalForest, PipelineResult]:
    """Train once on the proper training set, calibrate once, score all tests.

    The calibration scores are computed a single time and reused for every
    test instance; the per-test work is two posterior lookups and two counts.
    """
    if calib.y is None:
        raise DataError("calibration data must be labelled")
    forest = train_forest(proper, n_trees=n_trees, seed=seed, mtry=mtry, min_leaf=min_leaf, jobs=jobs)
    calib_scores = calibration_scores(forest.posterior(calib.X), calib.y)
    model = ConformalForest(forest, calib_scores, denominator, tie_break)
    return model, predict_with(model, tests, deltas)
