use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EmbedError, Embedding};
use crate::Scalar;

/// Trainable linear map `weight · base + bias` on top of a frozen encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead<F: Scalar> {
    /// `embed_dim × input_dim`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    pub seed: u64,
}

impl<F: Scalar> ProjectionHead<F> {
    /// Uniform in `[-1/sqrt(input_dim), 1/sqrt(input_dim)]`, zero bias.
    pub fn init(input_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (input_dim.max(1) as f64).sqrt();
        let weight = Array2::from_shape_fn((embed_dim, input_dim), |_| F::of(rng.gen_range(-bound..=bound)));
        Self {
            weight,
            bias: Array1::zeros(embed_dim),
            seed,
        }
    }

    pub fn from_parts(weight: Array2<F>, bias: Array1<F>) -> Result<Self, EmbedError> {
        if weight.nrows() != bias.len() {
            return Err(EmbedError::Shape {
                expected: weight.nrows(),
                found: bias.len(),
            });
        }
        Ok(Self { weight, bias, seed: 0 })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn embed_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    pub fn project(&self, base: ArrayView1<'_, F>) -> Result<Embedding<F>, EmbedError> {
        if base.len() != self.input_dim() {
            return Err(EmbedError::Shape {
                expected: self.input_dim(),
                found: base.len(),
            });
        }
        Ok(Embedding(self.weight.dot(&base) + &self.bias))
    }

    /// Row-wise projection of an `n × input_dim` batch.
    pub fn project_rows(&self, base: ArrayView2<'_, F>) -> Result<Array2<F>, EmbedError> {
        if base.ncols() != self.input_dim() {
            return Err(EmbedError::Shape {
                expected: self.input_dim(),
                found: base.ncols(),
            });
        }
        Ok(base.dot(&self.weight.t()) + self.bias.view().insert_axis(Axis(0)))
    }

    pub fn to_checkpoint(&self) -> HeadCheckpoint {
        HeadCheckpoint {
            weight: self
                .weight
                .outer_iter()
                .map(|r| r.iter().map(|v| v.as_f64()).collect())
                .collect(),
            bias: self.bias.iter().map(|v| v.as_f64()).collect(),
            embed_dim: self.embed_dim(),
            input_dim: self.input_dim(),
            seed: self.seed,
            version: HeadCheckpoint::VERSION,
        }
    }

    pub fn from_checkpoint(ck: &HeadCheckpoint) -> Result<Self, EmbedError> {
        if ck.version != HeadCheckpoint::VERSION {
            return Err(EmbedError::Version(ck.version));
        }
        if ck.weight.len() != ck.embed_dim {
            return Err(EmbedError::Shape {
                expected: ck.embed_dim,
                found: ck.weight.len(),
            });
        }
        let mut flat = Vec::with_capacity(ck.embed_dim * ck.input_dim);
        for row in &ck.weight {
            if row.len() != ck.input_dim {
                return Err(EmbedError::Shape {
                    expected: ck.input_dim,
                    found: row.len(),
                });
            }
            flat.extend(row.iter().map(|&v| F::of(v)));
        }
        if ck.bias.len() != ck.embed_dim {
            return Err(EmbedError::Shape {
                expected: ck.embed_dim,
                found: ck.bias.len(),
            });
        }
        let head = Self {
            weight: Array2::from_shape_vec((ck.embed_dim, ck.input_dim), flat).expect("checked shape"),
            bias: ck.bias.iter().map(|&v| F::of(v)).collect(),
            seed: ck.seed,
        };
        if !head.is_finite() {
            return Err(EmbedError::NonFinite);
        }
        Ok(head)
    }
}

/// On-disk form of a projection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCheckpoint {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub embed_dim: usize,
    pub input_dim: usize,
    pub seed: u64,
    pub version: u32,
}

impl HeadCheckpoint {
    pub const VERSION: u32 = 1;

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
