use std::collections::HashMap;
use std::hash::Hasher;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use fnv::FnvHasher;
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EmbedError;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Packet,
    Text,
}

/// Precomputed base vectors keyed by [`sample_id`].
pub type VectorTable = Arc<HashMap<String, Vec<f64>>>;

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderKind {
    /// Feature hashing of n-grams (bytes for packets, lowercase words for text).
    HashedNgram { ngrams: Vec<usize> },
    /// Vectors computed offline by an external frozen model.
    ExternalImport { vectors: VectorTable },
}

/// A frozen, deterministic map from raw input to a fixed-size vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseEncoder {
    pub modality: Modality,
    pub output_dim: usize,
    pub kind: EncoderKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseEncoding<F: Scalar> {
    pub vector: Array1<F>,
    /// Input was empty; `vector` is all zeros.
    pub empty: bool,
}

impl BaseEncoder {
    /// Byte unigrams and bigrams.
    pub fn hashed_packet(output_dim: usize) -> Self {
        Self {
            modality: Modality::Packet,
            output_dim,
            kind: EncoderKind::HashedNgram { ngrams: vec![1, 2] },
        }
    }

    /// Word unigrams and bigrams.
    pub fn hashed_text(output_dim: usize) -> Self {
        Self {
            modality: Modality::Text,
            output_dim,
            kind: EncoderKind::HashedNgram { ngrams: vec![1, 2] },
        }
    }

    pub fn hashed(modality: Modality, output_dim: usize, ngrams: Vec<usize>) -> Self {
        Self {
            modality,
            output_dim,
            kind: EncoderKind::HashedNgram { ngrams },
        }
    }

    pub fn external(modality: Modality, output_dim: usize, path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        Ok(Self {
            modality,
            output_dim,
            kind: EncoderKind::ExternalImport {
                vectors: Arc::new(load_vectors(path)?),
            },
        })
    }

    fn check(&self, expected: Modality) -> Result<(), EmbedError> {
        if self.modality != expected {
            return Err(EmbedError::Modality {
                expected,
                actual: self.modality,
            });
        }
        Ok(())
    }

    fn lookup<F: Scalar>(&self, vectors: &VectorTable, raw: &[u8]) -> Result<BaseEncoding<F>, EmbedError> {
        let id = sample_id(raw);
        let v = vectors.get(&id).ok_or_else(|| EmbedError::MissingVector(id.clone()))?;
        if v.len() != self.output_dim {
            return Err(EmbedError::VectorDim {
                id,
                expected: self.output_dim,
                found: v.len(),
            });
        }
        Ok(BaseEncoding {
            vector: v.iter().map(|&x| F::of(x)).collect(),
            empty: raw.is_empty(),
        })
    }
}

/// Content digest identifying a sample in precomputed-vector files.
pub fn sample_id(raw: &[u8]) -> String {
    hex::encode(Sha256::digest(raw))
}

/// Reads JSON-lines `{"id": ..., "vec": [...]}`.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<HashMap<String, Vec<f64>>, EmbedError> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        vec: Vec<f64>,
    }
    let path = path.as_ref();
    let io = |source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = HashMap::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line)?;
        out.insert(row.id, row.vec);
    }
    Ok(out)
}

fn bucket(tag: u8, gram: &[u8], dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write_u8(tag);
    h.write(gram);
    (h.finish() % dim as u64) as usize
}

fn l2_normalize<F: Scalar>(counts: Vec<f64>) -> Array1<F> {
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Array1::zeros(counts.len());
    }
    counts.into_iter().map(|c| F::of(c / norm)).collect()
}

/// Lowercased word tokens; letters, digits, `-` and `_` stay inside tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'))
        .map(|t| t.trim_matches('-').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

pub fn encode_packet_base<F: Scalar>(payload: &[u8], enc: &BaseEncoder) -> Result<BaseEncoding<F>, EmbedError> {
    enc.check(Modality::Packet)?;
    match &enc.kind {
        EncoderKind::ExternalImport { vectors } => enc.lookup(vectors, payload),
        EncoderKind::HashedNgram { ngrams } => {
            if payload.is_empty() {
                log::warn!("empty payload encoded as zero vector");
                return Ok(BaseEncoding {
                    vector: Array1::zeros(enc.output_dim),
                    empty: true,
                });
            }
            let mut counts = vec![0f64; enc.output_dim];
            for &n in ngrams {
                for gram in payload.windows(n) {
                    counts[bucket(n as u8, gram, enc.output_dim)] += 1.0;
                }
            }
            Ok(BaseEncoding {
                vector: l2_normalize(counts),
                empty: false,
            })
        }
    }
}

pub fn encode_text_base<F: Scalar>(text: &str, enc: &BaseEncoder) -> Result<BaseEncoding<F>, EmbedError> {
    enc.check(Modality::Text)?;
    match &enc.kind {
        EncoderKind::ExternalImport { vectors } => enc.lookup(vectors, text.as_bytes()),
        EncoderKind::HashedNgram { ngrams } => {
            let tokens = tokenize(text);
            if tokens.is_empty() {
                log::warn!("empty text encoded as zero vector");
                return Ok(BaseEncoding {
                    vector: Array1::zeros(enc.output_dim),
                    empty: true,
                });
            }
            let mut counts = vec![0f64; enc.output_dim];
            for &n in ngrams {
                for gram in tokens.windows(n) {
                    counts[bucket(b't' + n as u8, gram.join(" ").as_bytes(), enc.output_dim)] += 1.0;
                }
            }
            Ok(BaseEncoding {
                vector: l2_normalize(counts),
                empty: false,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::cosine;
    use crate::ingest::synth_dataset;

    #[test]
    fn empty_inputs_give_zero_vectors() {
        let p = encode_packet_base::<f64>(&[], &BaseEncoder::hashed_packet(64)).unwrap();
        assert!(p.empty && p.vector.iter().all(|&v| v == 0.0));
        let t = encode_text_base::<f64>("", &BaseEncoder::hashed_text(64)).unwrap();
        assert!(t.empty && t.vector.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let enc = BaseEncoder::hashed_packet(512);
        let a = encode_packet_base::<f64>(b"\x16\x03\x01hello", &enc).unwrap();
        let b = encode_packet_base::<f64>(b"\x16\x03\x01hello", &enc).unwrap();
        assert_eq!(a, b);
        assert!((a.vector.dot(&a.vector) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unigram_text_is_bag_of_words() {
        let enc = BaseEncoder::hashed(Modality::Text, 256, vec![1]);
        let a = encode_text_base::<f64>("syn flood toward port eighty", &enc).unwrap();
        let b = encode_text_base::<f64>("eighty port toward flood syn", &enc).unwrap();
        assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn different_phrases_not_parallel() {
        let enc = BaseEncoder::hashed_text(512);
        let a = encode_text_base::<f64>("dos attack", &enc).unwrap();
        let b = encode_text_base::<f64>("port scanning", &enc).unwrap();
        assert!(cosine(a.vector.view(), b.vector.view()) < 1.0);
    }

    #[test]
    fn wrong_modality_rejected() {
        assert!(encode_text_base::<f64>("x", &BaseEncoder::hashed_packet(8)).is_err());
    }

    #[test]
    fn synthetic_classes_separate_in_cosine() {
        let d = synth_dataset(4, 80, 5).unwrap();
        let enc = BaseEncoder::hashed_packet(512);
        let vecs: Vec<(String, Array1<f64>)> = d
            .sequence
            .records
            .iter()
            .map(|r| (r.label.clone(), encode_packet_base(&r.payload, &enc).unwrap().vector))
            .collect();
        for (ci, cj) in [("dos", "benign"), ("reconnaissance", "brute_force")] {
            let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
            for (la, a) in &vecs {
                for (lb, b) in &vecs {
                    let c = cosine(a.view(), b.view());
                    if la == ci && lb == ci {
                        intra += c;
                        ni += 1;
                    } else if la == ci && lb == cj {
                        inter += c;
                        nx += 1;
                    }
                }
            }
            assert!(inter / (nx as f64) < intra / (ni as f64), "{ci} vs {cj}");
        }
    }

    #[test]
    fn external_vectors_load_identically_twice() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let id = sample_id(b"abc");
        std::fs::write(&path, format!("{{\"id\":\"{id}\",\"vec\":[0.5,-1.0,2.0]}}\n")).unwrap();
        let e1 = BaseEncoder::external(Modality::Packet, 3, &path).unwrap();
        let e2 = BaseEncoder::external(Modality::Packet, 3, &path).unwrap();
        let a = encode_packet_base::<f64>(b"abc", &e1).unwrap();
        let b = encode_packet_base::<f64>(b"abc", &e2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vector.to_vec(), vec![0.5, -1.0, 2.0]);
        assert!(matches!(encode_packet_base::<f64>(b"zzz", &e1), Err(EmbedError::MissingVector(_))));
    }
}
