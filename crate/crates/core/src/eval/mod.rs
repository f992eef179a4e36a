//! Metrics, experiment protocols and report export.

pub mod experiment;
pub mod metrics;
pub mod regression;
pub mod report;

pub use experiment::{
    run_binary_experiment, run_multiway_experiment, sr_analysis, BinaryProtocol, EvalReport,
    ExperimentSettings, Method, Metric, MultiwayProtocol, NegativePools, TransferContext,
};
pub use metrics::{f1_score, roc_auc, roc_curve, top1_accuracy, top1_micro};
pub use regression::{sr_improvement_regression, RegressionResult};
