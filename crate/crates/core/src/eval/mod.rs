//! Confusion matrices, exact precision/recall/F1 reports, batch evaluation
//! of both models and interactive teaching sessions.

mod evaluate;
mod interactive;
mod metrics;

pub use evaluate::{
    evaluate_nlu, evaluate_nlu_with, evaluate_policy, evaluate_policy_with, nlu_predictions, policy_predictions,
    StoryPredictions,
};
pub use interactive::{
    export_augmented_corpus, Correction, CorrectionEntry, CorrectionKind, CorrectionLog, InteractiveError,
    InteractiveSession, Prediction, Review,
};
pub use metrics::{
    compare_reports, compute_metrics, f1_score, to_f64, ClassMetrics, ConfusionMatrix, EvaluationReport, MetricDelta,
    MetricsError, ReportComparison, WEIGHTED_LABEL,
};

/// Exact metric values are `BigRational`s.
pub use num_bigint::BigInt;
pub use num_rational::BigRational;
