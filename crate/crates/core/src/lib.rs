//! Packet/text contrastive embeddings and knowledge-graph temporal reasoning
//! for network intrusion detection.

pub mod embed;
pub mod eval;
pub mod ingest;
pub mod autodiff;
pub mod contrastive;
pub mod kg;
pub mod optim;
pub mod pipeline;
pub mod provider;
pub mod reason;
pub mod textgen;
mod scalar;

pub use scalar::Scalar;

pub type Embedding = embed::Embedding<f64>;
pub type ProjectionHead = embed::ProjectionHead<f64>;
pub type SslHeads = contrastive::SslHeads<f64>;
pub type ReasonerModel = reason::ReasonerModel<f64>;
pub type MissionInputs = reason::MissionInputs<f64>;

/// Derives an independent stream seed from a base seed and a salt.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
