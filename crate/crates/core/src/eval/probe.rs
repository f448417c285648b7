use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::softmax_rows;
use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub lr: f64,
    /// L2 penalty on the weights.
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            lr: 0.05,
            l2: 1e-4,
        }
    }
}

/// Multinomial logistic regression on fixed per-packet features; the
/// baseline that sees one packet at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    /// `classes × features`
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl LogisticProbe {
    /// Full-batch training from zero weights (deterministic).
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self, EvalError> {
        let (n, d) = x.dim();
        if n != y.len() || n == 0 {
            return Err(EvalError::Shape(format!("{n} feature rows for {} labels", y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= classes) {
            return Err(EvalError::Shape(format!("label index {bad} outside {classes} classes")));
        }
        let mut w = Array2::zeros((classes, d));
        let mut b = Array2::zeros((1, classes));
        let mut opt = Adam::<f64>::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            &[w.len(), b.len()],
        );
        for _ in 0..cfg.steps {
            let mut g = softmax_rows((x.dot(&w.t()) + &b).view());
            for (i, &c) in y.iter().enumerate() {
                g[[i, c]] -= 1.0;
            }
            g /= n as f64;
            let gw = g.t().dot(&x) + &(&w * cfg.l2);
            let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
            opt.tick();
            opt.update(0, w.as_slice_mut().expect("contiguous"), gw.as_standard_layout().as_slice().expect("contiguous"));
            opt.update(1, b.as_slice_mut().expect("contiguous"), gb.as_slice().expect("contiguous"));
        }
        Ok(Self { weight: w, bias: b })
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        softmax_rows((x.dot(&self.weight.t()) + &self.bias).view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn separable_blobs_are_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let centers = [[2.0, 0.0], [-2.0, 0.0], [0.0, 2.0]];
        let y: Vec<usize> = (0..90).map(|i| i % 3).collect();
        let x = Array2::from_shape_fn((90, 2), |(i, j)| centers[y[i]][j] + rng.gen_range(-0.5..0.5));
        let p = LogisticProbe::fit(x.view(), &y, 3, &ProbeConfig::default()).unwrap();
        let probs = p.predict_proba(x.view());
        let correct = probs
            .rows()
            .into_iter()
            .zip(&y)
            .filter(|(r, &c)| r.iter().all(|&v| v <= r[c]))
            .count();
        assert_eq!(correct, 90);
        assert!(LogisticProbe::fit(x.view(), &y[..10], 3, &ProbeConfig::default()).is_err());
    }
}
