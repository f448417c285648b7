//! Mission graphs as small GNNs feeding a temporal transformer classifier.
//!
//! Each mission graph turns the current packet into one `D`-dimensional
//! vector read at its embedding node. The vectors of all missions form a
//! frame token; the last `window` frame tokens are classified together.

mod forward;
mod graph;
mod model;
mod stream;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Activation, Combine};
use crate::embed::EmbedError;
use crate::optim::AdamConfig;

pub use forward::{
    init_node_features, layer_transform, message_pass, mission_forward, standardize, temporal_forward, temporal_logits,
    MissionInputs,
};
pub use graph::{FeatureAssignment, GraphIndex};
pub use model::{
    EncoderBlock, GnnLayer, MissionReasoner, NamedTensor, ReasonerCheckpoint, ReasonerModel, TemporalHead,
};
pub use stream::{infer_stream, read_scores, write_scores, ScoreRecord, StreamState};
pub use train::{
    batch_loss, label_indices, packet_embeddings, train_from, train_reasoner, window_indices, BatchOutput,
    ReasonerTrainLog, TrainBatch, TrainedReasoner,
};

#[derive(Debug, Error)]
pub enum ReasonError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (parameter norm {param_norm})")]
    NonFinite { step: usize, param_norm: f64 },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Architecture and training knobs of the reasoner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasonerConfig {
    /// Node feature width `D`.
    pub node_dim: usize,
    /// Transform + message-passing rounds per mission graph.
    pub gnn_layers: usize,
    pub activation: Activation,
    pub combine: Combine,
    /// Starting value of every GNN bias entry. Elementwise products of
    /// near-zero features vanish over layers; a positive offset keeps the
    /// packet signal alive at initialization.
    pub gnn_bias_init: f64,
    pub d_model: usize,
    pub heads: usize,
    /// Transformer encoder blocks.
    pub depth: usize,
    /// Frame tokens per classified window.
    pub window: usize,
    pub d_ff: usize,
    pub cls_hidden: usize,
    /// Weight of the temporal smoothing term.
    pub smoothing: f64,
    /// Consecutive targets per sampled training segment.
    pub segment: usize,
    pub steps: usize,
    /// Target windows per step (a multiple of `segment`).
    pub batch: usize,
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for ReasonerConfig {
    fn default() -> Self {
        Self {
            node_dim: 8,
            gnn_layers: 3,
            activation: Activation::Tanh,
            combine: Combine::Elementwise,
            gnn_bias_init: 0.5,
            d_model: 128,
            heads: 8,
            depth: 1,
            window: 30,
            d_ff: 128,
            cls_hidden: 64,
            smoothing: 0.1,
            segment: 4,
            steps: 3000,
            batch: 128,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl ReasonerConfig {
    pub fn validate(&self) -> Result<(), ReasonError> {
        let bad = |m: String| Err(ReasonError::Config(m));
        if self.node_dim == 0 || self.gnn_layers == 0 || self.depth == 0 || self.window == 0 {
            return bad("node_dim, gnn_layers, depth and window must be positive".into());
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.segment == 0 || self.batch == 0 || !self.batch.is_multiple_of(self.segment) {
            return bad(format!("batch {} must be a positive multiple of segment {}", self.batch, self.segment));
        }
        if !self.gnn_bias_init.is_finite() {
            return bad(format!("gnn_bias_init must be finite, got {}", self.gnn_bias_init));
        }
        if !(self.smoothing >= 0.0) {
            return bad(format!("smoothing weight must be non-negative, got {}", self.smoothing));
        }
        Ok(())
    }
}
