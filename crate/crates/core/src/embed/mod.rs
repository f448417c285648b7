//! Frozen base encoders, trainable linear projection heads, and the shared
//! embedding space they map into.

mod encoder;
mod head;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

pub use encoder::{
    encode_packet_base, encode_text_base, load_vectors, sample_id, tokenize, BaseEncoder, BaseEncoding,
    EncoderKind, Modality, VectorTable,
};
pub use head::{HeadCheckpoint, ProjectionHead};

pub const DEFAULT_EMBED_DIM: usize = 128;
pub const DEFAULT_BASE_DIM: usize = 512;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("shape error: expected dimension {expected}, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("encoder modality is {actual:?}, expected {expected:?}")]
    Modality { expected: Modality, actual: Modality },
    #[error("no precomputed vector for sample id {0}")]
    MissingVector(String),
    #[error("precomputed vector `{id}` has {found} entries, encoder expects {expected}")]
    VectorDim { id: String, expected: usize, found: usize },
    #[error("non-finite parameter in projection head")]
    NonFinite,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A point in the joint text/packet space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding<F: Scalar>(pub Array1<F>);

impl<F: Scalar> Embedding<F> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn view(&self) -> ArrayView1<'_, F> {
        self.0.view()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Cosine similarity; `(0, true)` when either side is the zero vector.
pub fn cosine_flagged<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> (F, bool) {
    assert_eq!(a.len(), b.len(), "cosine of vectors with different dimensions");
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == F::zero() || nb == F::zero() {
        return (F::zero(), true);
    }
    let c = a.dot(&b) / (na * nb);
    (c.max(-F::one()).min(F::one()), false)
}

pub fn cosine<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> F {
    cosine_flagged(a, b).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn cosine_fixed_points() {
        let a = array![1.0, 2.0, -3.0];
        assert!((cosine(a.view(), a.view()) - 1.0f64).abs() < 1e-15);
        assert_eq!(cosine(array![1.0, 0.0].view(), array![0.0, 5.0].view()), 0.0f64);
        let neg = -&a;
        assert!((cosine(a.view(), neg.view()) + 1.0f64).abs() < 1e-15);
        assert_eq!(cosine_flagged(a.view(), array![0.0, 0.0, 0.0].view()), (0.0, true));
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_bounded(v in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..16)) {
            let a: Array1<f64> = v.iter().map(|p| p.0).collect();
            let b: Array1<f64> = v.iter().map(|p| p.1).collect();
            let ab = cosine(a.view(), b.view());
            prop_assert_eq!(ab, cosine(b.view(), a.view()));
            prop_assert!(ab.abs() <= 1.0 + 1e-12);
        }
    }
}
