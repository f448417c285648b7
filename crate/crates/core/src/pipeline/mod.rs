//! End-to-end orchestration: ingest, graph generation, corpus, head
//! pretraining, reasoner training and evaluation, with hashed artifacts.

mod config;
mod report;
mod run;
mod stages;

use thiserror::Error;

pub use config::{
    default_grouping, CorpusSettings, DataSource, EncoderSettings, EvalSettings, PipelineConfig, SynthSettings,
};
pub use report::{render_report, report, write_auc_csv};
pub use run::{
    infer, run_pipeline, sha256_file, ArtifactHash, Manifest, RunOptions, RunSummary, StageRecord, ARTIFACT_CORPUS,
    ARTIFACT_DATASET, ARTIFACT_EVAL, ARTIFACT_HEADS, ARTIFACT_KGS, ARTIFACT_REASONER, ARTIFACT_SCORES, MANIFEST, STAGES,
};
pub use stages::{
    build_graphs, build_training_corpus, cost_estimate, evaluate, ingest, missions, pretrain, run_in_memory, score_sequence, split, sweep, train,
    zero_shot_prompts, zero_shot_top_k, Dataset, EvalReport,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {0}")]
    Missing(String),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

impl PipelineError {
    pub(crate) fn stage(stage: &str, e: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage: stage.to_string(),
            message: e.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    /// Stage the error came from, if any.
    pub fn stage_name(&self) -> Option<&str> {
        match self {
            PipelineError::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
