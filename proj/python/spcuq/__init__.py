"""Split-point self-consistency uncertainty quantification.

Thin re-export of the compiled core. All numeric work happens in C++;
arrays cross the boundary as numpy via Eigen.
"""

from ._core import (
    SpcuqError,
    accuracy,
    auroc,
    calibrate_prediction,
    ece,
    empirical_mars,
    harmonic_mean,
    ood_threshold,
    picp,
    piece,
    piece_split,
    predict_reg_uq,
    predictive_entropy,
    quantile_type7,
    reg_calibrated_interval,
    reg_calibration_factors,
    reg_interval,
    render_report,
    rmse,
    run_experiment,
    sds,
    sds_classification,
    sds_regression,
    self_consistency_discrepancy,
    spearman,
    train_reg_uq,
    validate_config,
    winkler_score,
)

__all__ = [
    "SpcuqError",
    "accuracy",
    "auroc",
    "calibrate_prediction",
    "ece",
    "empirical_mars",
    "harmonic_mean",
    "ood_threshold",
    "picp",
    "piece",
    "piece_split",
    "predict_reg_uq",
    "predictive_entropy",
    "quantile_type7",
    "reg_calibrated_interval",
    "reg_calibration_factors",
    "reg_interval",
    "render_report",
    "rmse",
    "run_experiment",
    "sds",
    "sds_classification",
    "sds_regression",
    "self_consistency_discrepancy",
    "spearman",
    "train_reg_uq",
    "validate_config",
    "winkler_score",
]
