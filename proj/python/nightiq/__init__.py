"""Blind quality assessment for night-time images."""

from nightiq._core import (
    CameraResponseParams,
    Predictor,
    camera_response,
    evaluate_criteria,
    gradcheck,
    krcc,
    load_image,
    make_eai,
    penalty_curve,
    plcc_rmse,
    rank_n_accuracy,
    significance_ttest,
    srcc,
    train,
    write_synthetic_corpus,
)

__all__ = [
    "CameraResponseParams",
    "Predictor",
    "camera_response",
    "evaluate_criteria",
    "gradcheck",
    "krcc",
    "load_image",
    "make_eai",
    "penalty_curve",
    "plcc_rmse",
    "rank_n_accuracy",
    "significance_ttest",
    "srcc",
    "train",
    "write_synthetic_corpus",
]
