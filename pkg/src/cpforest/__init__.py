"""cpforest: random-forest conformal prediction with per-class validity.

A from-scratch random forest supplies class posterior probabilities; a
label-conditional inductive conformal layer turns them into p-values,
prediction sets with per-class error guarantees, and forced predictions with
confidence and credibility measures. An experiment harness reproduces
forced-prediction metrics, per-class validity curves, and p-value quality
criteria under class imbalance.
"""

__version__ = "0.1.0"

from .data import (
    BENIGN,
    MALICIOUS,
    LABEL_NAMES,
    DataError,
    Dataset,
    Instance,
    NormalizationParams,
    SplitPlan,
    calibration_split,
    normalize,
    rng_from,
    spawn_seed,
    stratified_sample,
)
from .features import (
    AGGREGATIONS,
    AppRecording,
    ParseReport,
    RecordingFormatError,
    aggregate,
    build_feature_dataset,
    default_schema,
    parse_recordings,
)
from .forest import DecisionTree, RandomForest, default_mtry, train_forest, train_tree
from .conformal import (
    CalibrationScores,
    ConformalForest,
    ForcedPrediction,
    PipelineResult,
    calibration_scores,
    class_pvalues,
    forced_prediction,
    forced_predictions,
    icp_pvalue,
    label_conditional,
    lcmcp_pvalue,
    lcmicp_pvalue,
    mondrian_calibration,
    mondrian_pvalue,
    nonconformity,
    one_nn_scorer,
    prediction_sets,
    predict_with,
    rf_lcmicp_pipeline,
    tcp_pvalue,
)
from .evaluation import (
    DEFAULT_DELTA_GRID,
    TABLE_DELTAS,
    ExperimentConfig,
    ExperimentReport,
    MetricsReport,
    baseline_inclusion_probability,
    baseline_rf_sets,
    classification_metrics,
    conformal_set_masks,
    n_criterion,
    ou_criterion,
    run_experiment,
    run_repetition,
    validity_curve,
)
from .io import ModelBundle, load_dataset_csv, load_model, save_dataset_csv, save_model
from .synthetic import make_two_gaussians
