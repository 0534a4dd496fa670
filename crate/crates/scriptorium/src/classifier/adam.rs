//! Adam optimizer in its textbook bias-corrected form.

use super::network::{Gradient, ModelParams};
use super::TrainConfig;

/// Adam state: first and second moment estimates per parameter tensor.
/// Moments are allocated lazily on the first step so the optimizer can be
/// built before the model.
#[derive(Clone, Debug)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn beta1(mut self, beta1: f64) -> Self {
        self.beta1 = beta1;
        self
    }

    pub fn beta2(mut self, beta2: f64) -> Self {
        self.beta2 = beta2;
        self
    }

    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn from_train_config(tcfg: &TrainConfig) -> Self {
        Self::new(tcfg.learning_rate)
            .beta1(tcfg.beta1)
            .beta2(tcfg.beta2)
            .epsilon(tcfg.epsilon)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update: `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`, then
    /// `θ ← θ − lr · m̂ / (√v̂ + ε)` with bias-corrected `m̂ = m/(1−β₁ᵗ)`,
    /// `v̂ = v/(1−β₂ᵗ)`.
    pub fn step(&mut self, params: &mut ModelParams, grad: &Gradient) {
        let grads = grad.tensors();
        if self.m.is_empty() {
            self.m = grads.iter().map(|t| vec![0.0; t.len()]).collect();
            self.v = grads.iter().map(|t| vec![0.0; t.len()]).collect();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for ((theta, g), (m, v)) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(theta.len(), g.len());
            for i in 0..theta.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}
