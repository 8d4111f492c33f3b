//! Evaluation harness: the full metric suite, rating aggregation, the
//! learning-curve runner, and table-shaped report rendering.

pub mod bleu;
pub mod curve;
pub mod metrics;
pub mod ratings;
pub mod report;

pub use bleu::{bleu, Smoothing};
pub use curve::{learning_curve, CurveRow, LearningCurve, CURVE_METRICS};
pub use metrics::{accuracy, f1_from, keypoint_accuracy, precision_recall_f1, KeypointAccuracy};
pub use ratings::{
    aggregate_ratings, format_mean_std, DimensionStats, RatingSet, RATING_DIMENSIONS,
};
pub use report::{
    check_f1_consistency, prose_binding, render_report, tables_binding, Cell, EvalReport,
    ReportFormat, ReportRow, TaskMetrics,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("undefined recall: gold set is empty")]
    EmptyGold,
    #[error("prediction/gold length mismatch: {pred} vs {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("empty label lists")]
    EmptyLabels,
    #[error("invalid label {label:?} for {classes}-class accuracy")]
    InvalidLabel { label: String, classes: usize },
    #[error("classes must be 2 or 4, got {0}")]
    InvalidClassCount(usize),
    #[error("no usable references (empty or tokenize to nothing)")]
    EmptyReferences,
    #[error("rating {value} outside [0, 5] in dimension {dimension}")]
    RatingOutOfRange { dimension: String, value: f64 },
    #[error("rating dimension {0} is empty")]
    EmptyDimension(String),
    #[error("train sizes must be strictly ascending and positive")]
    BadTrainSizes,
    #[error("report row {row:?} inconsistent with task binding at metric {metric:?}")]
    InconsistentRow { row: String, metric: String },
}

/// The metric vocabulary of the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricName {
    Precision,
    Recall,
    F1,
    Accuracy,
    Accuracy2,
    Accuracy4,
    Bleu,
    KpAccuracy,
}

impl MetricName {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricName::Precision => "precision",
            MetricName::Recall => "recall",
            MetricName::F1 => "f1",
            MetricName::Accuracy => "accuracy",
            MetricName::Accuracy2 => "accuracy2",
            MetricName::Accuracy4 => "accuracy4",
            MetricName::Bleu => "bleu",
            MetricName::KpAccuracy => "kp_accuracy",
        }
    }
}
