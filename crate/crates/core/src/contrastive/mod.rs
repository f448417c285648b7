//! InfoNCE alignment of packet and text embeddings: loss, analytic
//! gradients, the head pretraining loop, and zero-shot classification.

mod heads;
mod loss;
mod train;
mod zeroshot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{BaseEncoder, EmbedError, DEFAULT_BASE_DIM, DEFAULT_EMBED_DIM};
use crate::optim::AdamConfig;

pub use heads::{HeadGrads, HeadsCheckpoint, SslHeads};
pub use loss::{batch_loss_grad, info_nce, info_nce_grad, BatchLoss};
pub use train::{encode_corpus, pretrain_heads, pretrain_on_bases, PretrainOutcome};
pub use zeroshot::{class_prompt, template_prompts, zero_shot_classify, ZeroShotClassifier};

#[derive(Debug, Error)]
pub enum ContrastiveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (text head norm {text_norm}, packet head norm {packet_norm})")]
    NonFinite { step: usize, text_norm: f64, packet_norm: f64 },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Which projection heads are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SslMode {
    /// No heads; both modalities compared in their base spaces.
    None,
    /// A packet head maps into the text encoder's base space.
    PacketOnly,
    /// Heads on both encoders map into a shared space.
    #[default]
    Both,
}

impl std::str::FromStr for SslMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(SslMode::None),
            "packet-only" => Ok(SslMode::PacketOnly),
            "both" => Ok(SslMode::Both),
            other => Err(format!("unknown ssl mode `{other}` (none, packet-only, both)")),
        }
    }
}

/// Terms in the InfoNCE denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenominatorMode {
    /// Positive plus negatives.
    #[default]
    Standard,
    /// Negatives only.
    NegativesOnly,
}

impl std::str::FromStr for DenominatorMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(DenominatorMode::Standard),
            "negatives-only" => Ok(DenominatorMode::NegativesOnly),
            other => Err(format!("unknown denominator mode `{other}` (standard, negatives-only)")),
        }
    }
}

/// Frozen base encoders for the two modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderPair {
    pub text: BaseEncoder,
    pub packet: BaseEncoder,
}

impl Default for EncoderPair {
    fn default() -> Self {
        Self {
            text: BaseEncoder::hashed_text(DEFAULT_BASE_DIM),
            packet: BaseEncoder::hashed_packet(DEFAULT_BASE_DIM),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    #[serde(flatten)]
    pub adam: AdamConfig,
    pub steps: usize,
    pub batch: usize,
    pub tau: f64,
    pub denominator_mode: DenominatorMode,
    pub ssl_mode: SslMode,
    /// Average the text-to-packet and packet-to-text losses.
    pub symmetric: bool,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            steps: 3000,
            batch: 128,
            tau: 0.07,
            denominator_mode: DenominatorMode::Standard,
            ssl_mode: SslMode::Both,
            symmetric: false,
            embed_dim: DEFAULT_EMBED_DIM,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ContrastiveError> {
        if !(self.tau > 0.0) {
            return Err(ContrastiveError::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.steps == 0 {
            return Err(ContrastiveError::Config("steps must be ≥ 1".into()));
        }
        if self.batch < 2 {
            return Err(ContrastiveError::Config(format!("batch must be ≥ 2, got {}", self.batch)));
        }
        Ok(())
    }
}
