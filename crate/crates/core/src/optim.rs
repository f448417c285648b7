//! Adam with bias correction over flat parameter slices.

use serde::{Deserialize, Serialize};

use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5.0e-4,
            beta1: 0.9,
            beta2: 0.8,
            epsilon: 1.0e-6,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors ("slots").
#[derive(Debug, Clone)]
pub struct Adam<F: Scalar> {
    pub config: AdamConfig,
    t: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, slot_sizes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: slot_sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
            v: slot_sizes.iter().map(|&n| vec![F::zero(); n]).collect(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Advances the step counter; call once before updating the slots of a step.
    pub fn tick(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, slot: usize, param: &mut [F], grad: &[F]) {
        assert_eq!(param.len(), grad.len(), "parameter/gradient length mismatch");
        assert_eq!(param.len(), self.m[slot].len(), "slot size changed");
        assert!(self.t > 0, "tick() before update()");
        let c = &self.config;
        let (b1, b2) = (F::of(c.beta1), F::of(c.beta2));
        let one = F::one();
        let bc1 = one - F::of(c.beta1.powi(self.t));
        let bc2 = one - F::of(c.beta2.powi(self.t));
        let (lr, eps) = (F::of(c.lr), F::of(c.epsilon));
        let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
        for i in 0..param.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            param[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}
