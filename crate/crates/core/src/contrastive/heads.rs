use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{ContrastiveError, EncoderPair, SslMode};
use crate::derive_seed;
use crate::embed::{encode_packet_base, encode_text_base, EmbedError, HeadCheckpoint, ProjectionHead};
use crate::Scalar;

/// The trainable heads of one [`SslMode`]; absent heads act as identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SslHeads<F: Scalar> {
    pub mode: SslMode,
    pub text: Option<ProjectionHead<F>>,
    pub packet: Option<ProjectionHead<F>>,
    text_dim: usize,
    packet_dim: usize,
}

/// Gradients for whichever heads exist: `(weight, bias)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads<F: Scalar> {
    pub text: Option<(Array2<F>, Array1<F>)>,
    pub packet: Option<(Array2<F>, Array1<F>)>,
}

impl<F: Scalar> SslHeads<F> {
    pub fn init(mode: SslMode, text_dim: usize, packet_dim: usize, embed_dim: usize, seed: u64) -> Result<Self, ContrastiveError> {
        let (text, packet) = match mode {
            SslMode::Both => (
                Some(ProjectionHead::init(text_dim, embed_dim, derive_seed(seed, 1))),
                Some(ProjectionHead::init(packet_dim, embed_dim, derive_seed(seed, 2))),
            ),
            SslMode::PacketOnly => (None, Some(ProjectionHead::init(packet_dim, text_dim, derive_seed(seed, 2)))),
            SslMode::None => {
                if text_dim != packet_dim {
                    return Err(ContrastiveError::Config(format!(
                        "without heads the base encoders must share a dimension ({text_dim} vs {packet_dim})"
                    )));
                }
                (None, None)
            }
        };
        Ok(Self {
            mode,
            text,
            packet,
            text_dim,
            packet_dim,
        })
    }

    pub fn for_encoders(mode: SslMode, enc: &EncoderPair, embed_dim: usize, seed: u64) -> Result<Self, ContrastiveError> {
        Self::init(mode, enc.text.output_dim, enc.packet.output_dim, embed_dim, seed)
    }

    pub fn text_dim(&self) -> usize {
        self.text_dim
    }

    pub fn packet_dim(&self) -> usize {
        self.packet_dim
    }

    /// Dimension of the shared space both modalities land in.
    pub fn embed_dim(&self) -> usize {
        match (&self.text, &self.packet) {
            (Some(t), _) => t.embed_dim(),
            (None, Some(p)) => p.embed_dim(),
            (None, None) => self.text_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.text.iter().chain(self.packet.iter()).map(|h| h.param_count()).sum()
    }

    fn apply(head: Option<&ProjectionHead<F>>, base: ArrayView2<'_, F>) -> Result<Array2<F>, EmbedError> {
        match head {
            Some(h) => h.project_rows(base),
            None => Ok(base.to_owned()),
        }
    }

    /// Projects a batch of text base vectors (one per row).
    pub fn text_rows(&self, base: ArrayView2<'_, F>) -> Result<Array2<F>, EmbedError> {
        Self::apply(self.text.as_ref(), base)
    }

    /// Projects a batch of packet base vectors (one per row).
    pub fn packet_rows(&self, base: ArrayView2<'_, F>) -> Result<Array2<F>, EmbedError> {
        Self::apply(self.packet.as_ref(), base)
    }

    pub fn embed_text(&self, text: &str, enc: &EncoderPair) -> Result<Array1<F>, EmbedError> {
        let b = encode_text_base::<F>(text, &enc.text)?.vector;
        Ok(self.text_rows(b.view().insert_axis(Axis(0)))?.row(0).to_owned())
    }

    pub fn embed_packet(&self, payload: &[u8], enc: &EncoderPair) -> Result<Array1<F>, EmbedError> {
        let b = encode_packet_base::<F>(payload, &enc.packet)?.vector;
        Ok(self.packet_rows(b.view().insert_axis(Axis(0)))?.row(0).to_owned())
    }

    /// Frobenius norms of the text and packet heads (0 when absent).
    pub fn norms(&self) -> (f64, f64) {
        let n = |h: &Option<ProjectionHead<F>>| {
            h.as_ref().map_or(0.0, |h| {
                h.weight
                    .iter()
                    .chain(h.bias.iter())
                    .map(|v| v.as_f64() * v.as_f64())
                    .sum::<f64>()
                    .sqrt()
            })
        };
        (n(&self.text), n(&self.packet))
    }

    pub fn to_checkpoint(&self) -> HeadsCheckpoint {
        HeadsCheckpoint {
            mode: self.mode,
            text_dim: self.text_dim,
            packet_dim: self.packet_dim,
            text: self.text.as_ref().map(ProjectionHead::to_checkpoint),
            packet: self.packet.as_ref().map(ProjectionHead::to_checkpoint),
        }
    }

    pub fn from_checkpoint(ck: &HeadsCheckpoint) -> Result<Self, EmbedError> {
        Ok(Self {
            mode: ck.mode,
            text: ck.text.as_ref().map(ProjectionHead::from_checkpoint).transpose()?,
            packet: ck.packet.as_ref().map(ProjectionHead::from_checkpoint).transpose()?,
            text_dim: ck.text_dim,
            packet_dim: ck.packet_dim,
        })
    }
}

/// Both heads of a pretraining run, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadsCheckpoint {
    pub mode: SslMode,
    pub text_dim: usize,
    pub packet_dim: usize,
    pub text: Option<HeadCheckpoint>,
    pub packet: Option<HeadCheckpoint>,
}

impl HeadsCheckpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_shapes() {
        let b = SslHeads::<f64>::init(SslMode::Both, 20, 12, 6, 1).unwrap();
        assert_eq!((b.embed_dim(), b.param_count()), (6, 20 * 6 + 6 + 12 * 6 + 6));
        let p = SslHeads::<f64>::init(SslMode::PacketOnly, 20, 12, 6, 1).unwrap();
        assert!(p.text.is_none());
        assert_eq!(p.embed_dim(), 20);
        let n = SslHeads::<f64>::init(SslMode::None, 16, 16, 6, 1).unwrap();
        assert_eq!((n.embed_dim(), n.param_count()), (16, 0));
        assert!(SslHeads::<f64>::init(SslMode::None, 16, 8, 6, 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let h = SslHeads::<f64>::init(SslMode::PacketOnly, 10, 8, 4, 3).unwrap();
        let json = serde_json::to_string(&h.to_checkpoint()).unwrap();
        let back = SslHeads::<f64>::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, h);
    }
}
