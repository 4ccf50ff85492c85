"""threshcal: selective-classification calibration on the top-two score gap.

Fit any score-producing classifier (built in: a supervised Gaussian mixture
scored by per-class log-likelihood), sweep an abstention threshold over a
hold-out set, select the threshold meeting a target error level, and apply it
to new data — in both the misclassification-rate and softmax multinomial-loss
formulations.
"""

from .calibrate import (
    AssignmentResult,
    CalibrationCurve,
    CurveRecord,
    ThresholdSelection,
    apply_threshold,
    average_entropy,
    build_grid,
    evaluate_at,
    mcl,
    select_threshold,
    softmax_log_probs,
    softmax_probs,
    sweep,
    top_two_gap,
)
from .dataset import (
    CsvSchema,
    LabeledDataset,
    SplitSpec,
    load_csv,
    save_csv,
    screen_features,
    split,
    subsample_balanced,
)
from .model import (
    GmmComponent,
    GmmParams,
    Scorer,
    classify_map,
    fit_gmm,
    load_params,
    save_params,
    score,
)
from .simulate import MixtureScenario, TvdEstimate, estimate_tvd, generate, oracle_scores

__version__ = "0.1.0"

__all__ = [
    "AssignmentResult",
    "CalibrationCurve",
    "CsvSchema",
    "CurveRecord",
    "GmmComponent",
    "GmmParams",
    "LabeledDataset",
    "MixtureScenario",
    "Scorer",
    "SplitSpec",
    "ThresholdSelection",
    "TvdEstimate",
    "apply_threshold",
    "average_entropy",
    "build_grid",
    "classify_map",
    "estimate_tvd",
    "evaluate_at",
    "fit_gmm",
    "generate",
    "load_csv",
    "load_params",
    "mcl",
    "oracle_scores",
    "save_csv",
    "save_params",
    "score",
    "screen_features",
    "select_threshold",
    "softmax_log_probs",
    "softmax_probs",
    "split",
    "subsample_balanced",
    "sweep",
    "top_two_gap",
]
