"""Experiment harness: forced-prediction metrics, per-class validity curves,
p-value quality criteria, and the conventional-forest baseline.

`run_experiment` repeats the whole protocol (sample test set, sample training
set, calibration split, train both models, evaluate) with per-repetition
derived seeds and averages the results.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import (
    BENIGN,
    MALICIOUS,
    DataError,
    Dataset,
    calibration_split,
    normalize,
    rng_from,
    spawn_seed,
    stratified_sample,
)
from .conformal import forced_predictions, prediction_sets, rf_lcmicp_pipeline
from .forest import train_forest

DEFAULT_DELTA_GRID = tuple(np.round(np.arange(0.01, 1.0, 0.01), 2))
TABLE_DELTAS = (0.05, 0.1, 0.15, 0.2)

# Per-repetition seed streams.
_STREAM_TEST, _STREAM_TRAIN, _STREAM_SPLIT, _STREAM_FOREST, _STREAM_BASELINE_FOREST, _STREAM_BASELINE_DRAW = range(6)

GROUPS = ("all", "malicious", "benign")


@dataclass(frozen=True)
class MetricsReport:
    """Forced-prediction quality with malicious as the positive class.

    Undefined cells (division by zero) are NaN, never silently 0.
    """

    accuracy: float
    sensitivity: float
    specificity: float
    f1: float


def _safe_div(num: float, den: float) -> float:
    return num / den if den else float("nan")


def classification_metrics(predicted: np.ndarray, truths: np.ndarray) -> MetricsReport:
    predicted = np.asarray(predicted, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predicted.size == 0:
        raise DataError("no predictions to score")
    tp = int(np.count_nonzero((predicted == MALICIOUS) & (truths == MALICIOUS)))
    tn = int(np.count_nonzero((predicted == BENIGN) & (truths == BENIGN)))
    fp = int(np.count_nonzero((predicted == MALICIOUS) & (truths == BENIGN)))
    fn = int(np.count_nonzero((predicted == BENIGN) & (truths == MALICIOUS)))
    precision = _safe_div(tp, tp + fp)
    recall = _safe_div(tp, tp + fn)
    return MetricsReport(
        accuracy=(tp + tn) / predicted.size,
        sensitivity=recall,
        specificity=_safe_div(tn, tn + fp),
        f1=_safe_div(2 * precision * recall, precision + recall),
    )


def validity_curve(set_masks: np.ndarray, truths: np.ndarray) -> np.ndarray:
    """Per-class error rates from prediction-set masks.

    `set_masks` has shape (n_deltas, n, 2); an instance errs at a level when
    its true label is not in the set. Returns (n_deltas, 2) with column j the
    error rate over class-j instances.
    """
    masks = np.asarray(set_masks, dtype=bool)
    truths = np.asarray(truths, dtype=np.int64)
    hit = masks[:, np.arange(truths.size), truths]  # (n_deltas, n)
    out = np.empty((masks.shape[0], 2))
    for label in (BENIGN, MALICIOUS):
        sel = truths == label
        out[:, label] = 1.0 - hit[:, sel].mean(axis=1)
    return out


def conformal_set_masks(pvalues: np.ndarray, deltas: Sequence[float]) -> np.ndarray:
    """Stack of prediction-set masks over a significance grid, shape (n_deltas, n, 2)."""
    return np.stack([prediction_sets(pvalues, d) for d in deltas])


def ou_criterion(pvalues: np.ndarray, truths: np.ndarray) -> dict:
    """Mean p-value of the incorrect class, for all / malicious / benign instances."""
    p = np.atleast_2d(np.asarray(pvalues, dtype=np.float64))
    truths = np.asarray(truths, dtype=np.int64)
    if p.shape[0] == 0:
        raise DataError("no p-values to score")
    wrong = p[np.arange(truths.size), 1 - truths]
    return {
        "all": float(wrong.mean()),
        "malicious": float(wrong[truths == MALICIOUS].mean()),
        "benign": float(wrong[truths == BENIGN].mean()),
    }


def n_criterion(set_masks: np.ndarray, truths: np.ndarray) -> dict:
    """Average prediction-set size per level, for all / malicious / benign instances."""
    masks = np.asarray(set_masks, dtype=bool)
    truths = np.asarray(truths, dtype=np.int64)
    sizes = masks.sum(axis=2).astype(np.float64)  # (n_deltas, n)
    return {
        "all": sizes.mean(axis=1),
        "malicious": sizes[:, truths == MALICIOUS].mean(axis=1),
        "benign": sizes[:, truths == BENIGN].mean(axis=1),
    }


def baseline_inclusion_probability(posteriors: np.ndarray, delta: float) -> np.ndarray:
    """Probability of adding the runner-up class to the argmax singleton.

    The raw expression (1 - delta - p_top) / p_other is clamped to [0,1]; a
    zero runner-up posterior gets probability 0.
    """
    post = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    p_top = post.max(axis=1)
    p_other = post.min(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (1.0 - delta - p_top) / p_other
    raw = np.where(p_other == 0, 0.0, raw)
    return np.clip(raw, 0.0, 1.0)


def baseline_rf_sets(posteriors: np.ndarray, delta: float, seed) -> np.ndarray:
    """Probabilistic-to-set conversion of plain forest posteriors.

    The argmax class is always kept (ties to benign); the other class joins
    with the clamped inclusion probability via one seeded uniform draw per
    instance. Using the same seed across levels couples the draws, which
    keeps the sets nested in delta.
    """
    post = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    rng = seed if isinstance(seed, np.random.Generator) else rng_from(int(seed))
    u = rng.random(post.shape[0])
    return _baseline_masks_from_u(post, delta, u)


def _baseline_masks_from_u(post: np.ndarray, delta: float, u: np.ndarray) -> np.ndarray:
    top = (post[:, MALICIOUS] > post[:, BENIGN]).astype(np.int64)
    include_other = u < baseline_inclusion_probability(post, delta)
    masks = np.zeros((post.shape[0], 2), dtype=bool)
    masks[np.arange(post.shape[0]), top] = True
    masks[np.arange(post.shape[0]), 1 - top] |= include_other
    return masks


@dataclass(frozen=True)
class ExperimentConfig:
    train_counts: tuple[int, int]                 # (benign, malicious)
    test_counts: tuple[int, int] = (300, 300)
    calibration_fraction: float = 0.2
    n_trees: int = 100
    repetitions: int = 100
    delta_grid: tuple[float, ...] = DEFAULT_DELTA_GRID
    table_deltas: tuple[float, ...] = TABLE_DELTAS
    root_seed: int = 0
    mtry: int | None = None
    min_leaf: int = 1
    denominator: str = "plus_one"
    tie_break: int = BENIGN
    feature_kind: str | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.repetitions < 1:
            raise DataError("repetitions must be >= 1")
        grid = np.asarray(self.delta_grid, dtype=np.float64)
        if grid.size and (np.diff(grid) <= 0).any():
            raise DataError("delta_grid must be strictly increasing")
        if grid.size and ((grid < 0) | (grid >= 1)).any():
            raise DataError("delta_grid values must lie in [0,1)")


@dataclass(frozen=True)
class RepetitionOutcome:
    conformal_metrics: MetricsReport
    baseline_metrics: MetricsReport
    ou: dict
    n_sizes: dict                      # group -> (len(table_deltas),)
    conformal_errors: np.ndarray       # (len(delta_grid), 2)
    baseline_errors: np.ndarray        # (len(delta_grid), 2)


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    outcomes: tuple[RepetitionOutcome, ...]

    def mean_metrics(self, method: str) -> MetricsReport:
        key = {"conformal": "conformal_metrics", "baseline": "baseline_metrics"}[method]
        rows = [getattr(o, key) for o in self.outcomes]
        return MetricsReport(
            accuracy=float(np.mean([m.accuracy for m in rows])),
            sensitivity=float(np.mean([m.sensitivity for m in rows])),
            specificity=float(np.mean([m.specificity for m in rows])),
            f1=float(np.mean([m.f1 for m in rows])),
        )

    def mean_ou(self) -> dict:
        return {g: float(np.mean([o.ou[g] for o in self.outcomes])) for g in GROUPS}

    def mean_n(self) -> dict:
        return {g: np.mean([o.n_sizes[g] for o in self.outcomes], axis=0) for g in GROUPS}

    def mean_errors(self, method: str) -> np.ndarray:
        key = {"conformal": "conformal_errors", "baseline": "baseline_errors"}[method]
        return np.mean([getattr(o, key) for o in self.outcomes], axis=0)


def run_repetition(cfg: ExperimentConfig, data: Dataset, rep: int) -> RepetitionOutcome:
    """One protocol pass with seeds derived from (root_seed, rep)."""
    root = cfg.root_seed
    test_counts = {BENIGN: cfg.test_counts[0], MALICIOUS: cfg.test_counts[1]}
    train_counts = {BENIGN: cfg.train_counts[0], MALICIOUS: cfg.train_counts[1]}

    test_idx, rest_idx = stratified_sample(data, test_counts, rng_from(root, rep, _STREAM_TEST))
    pool = data.take(rest_idx)
    train_sel, _ = stratified_sample(pool, train_counts, rng_from(root, rep, _STREAM_TRAIN))
    train_raw = pool.take(train_sel)
    test_raw = data.take(test_idx)

    train, (test,), _ = normalize(train_raw, [test_raw])
    plan = calibration_split(train, cfg.calibration_fraction, rng_from(root, rep, _STREAM_SPLIT))
    proper = train.take(plan.proper_training)
    calib = train.take(plan.calibration)

    _, result = rf_lcmicp_pipeline(
        proper,
        calib,
        test,
        n_trees=cfg.n_trees,
        deltas=cfg.table_deltas,
        seed=spawn_seed(root, rep, _STREAM_FOREST),
        mtry=cfg.mtry,
        min_leaf=cfg.min_leaf,
        denominator=cfg.denominator,
        tie_break=cfg.tie_break,
    )
    table_masks = np.stack(result.set_masks)
    grid_masks = conformal_set_masks(result.pvalues, cfg.delta_grid)

    # Conventional forest, trained on the whole training set (no split).
    baseline = train_forest(
        train,
        n_trees=cfg.n_trees,
        seed=spawn_seed(root, rep, _STREAM_BASELINE_FOREST),
        mtry=cfg.mtry,
        min_leaf=cfg.min_leaf,
    )
    base_post = baseline.posterior(test.X)
    base_pred = (base_post[:, MALICIOUS] > base_post[:, BENIGN]).astype(np.int64)
    u = rng_from(root, rep, _STREAM_BASELINE_DRAW).random(test.n)
    base_masks = np.stack([_baseline_masks_from_u(base_post, d, u) for d in cfg.delta_grid])

    return RepetitionOutcome(
        conformal_metrics=classification_metrics(result.forced_labels, test.y),
        baseline_metrics=classification_metrics(base_pred, test.y),
        ou=ou_criterion(result.pvalues, test.y),
        n_sizes=n_criterion(table_masks, test.y),
        conformal_errors=validity_curve(grid_masks, test.y),
        baseline_errors=validity_curve(base_masks, test.y),
    )


def run_experiment(cfg: ExperimentConfig, data: Dataset) -> ExperimentReport:
    """All repetitions, reduced in repetition order regardless of worker count."""
    reps = range(cfg.repetitions)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = tuple(pool.map(run_repetition, [cfg] * cfg.repetitions, [data] * cfg.repetitions, reps))
    else:
        outcomes = tuple(run_repetition(cfg, data, rep) for rep in reps)
    return ExperimentReport(cfg, outcomes)
