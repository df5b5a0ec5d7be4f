//! Classification metrics, the majority baseline and the 5×2cv F-test.

mod ftest;
mod metrics;
mod predictions;

pub use ftest::{
    f_upper_tail, five_by_two_cv_f_test, regularized_incomplete_beta, two_fold_splits,
    FiveByTwoResult, FoldSpec,
};
pub use metrics::{
    per_class_metrics, summarize, ClassMetrics, ConfusionMatrix, MajorityClassifier, Metric,
    MetricsReport,
};
pub use predictions::{evaluate_predictions, read_predictions, write_predictions, PredictionRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    Empty,
    #[error("{truth} truth labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("{0}")]
    Shape(String),
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("every iteration has zero variance but the differences are not all zero")]
    DegenerateVariance,
    #[error("prediction file line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("fold run failed: {0}")]
    Run(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
