//! Ranking metrics, the per-packet baseline, cost accounting and
//! data-scarcity sweeps.

mod cost;
mod metrics;
mod probe;
mod sweep;

use thiserror::Error;

pub use cost::{
    attention_flops, count_flops, count_params, linear_flops, linear_params, CostReport, GraphShape, FLOP_CONVENTION,
    REFERENCE_PARAMS, REFERENCE_TOKEN_FLOPS,
};
pub use metrics::{mean_auc, rank_labels, roc_auc, top_k_accuracy, MetricReport};
pub use probe::{LogisticProbe, ProbeConfig};
pub use sweep::{scarcity_sweep, write_curve_csv, SweepPoint, DEFAULT_FRACTIONS};

#[derive(Debug, Error)]
pub enum EvalError {
    /// The metric has no value on this input (e.g. a single class).
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
}
