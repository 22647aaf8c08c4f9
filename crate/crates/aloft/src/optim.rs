//! Gradient-descent parameter updates shared by the Q-learning and
//! image-translation trainers.
//!
//! An [`Optimizer`] owns per-parameter state (Adam moments) keyed by slot
//! index. Callers walk their parameters in a fixed order each step: call
//! [`Optimizer::begin_step`] once, then [`Optimizer::apply`] per parameter
//! with the matching gradient. Slot order must stay stable across steps.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {param}")]
    NonFiniteGradient { param: String },
    #[error("optimizer state mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    /// Adam with the standard defaults.
    pub fn adam() -> OptimizerKind {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::adam()
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    /// Completed update count; drives Adam bias correction.
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Optimizer {
        Optimizer {
            kind,
            lr,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Starts update `t + 1` over `n_slots` parameters. The first call fixes
    /// the slot count.
    pub fn begin_step(&mut self, n_slots: usize) -> Result<(), OptimError> {
        if self.m.is_empty() {
            self.m = vec![Vec::new(); n_slots];
            self.v = vec![Vec::new(); n_slots];
        } else if self.m.len() != n_slots {
            return Err(OptimError::Mismatch(format!(
                "optimizer was built for {} parameters, got {n_slots}",
                self.m.len()
            )));
        }
        self.t += 1;
        Ok(())
    }

    /// Updates one parameter in place. `slot` is its position in the fixed
    /// visit order; `name` only labels errors.
    pub fn apply(
        &mut self,
        slot: usize,
        name: &str,
        param: &mut Tensor,
        grad: &[f64],
    ) -> Result<(), OptimError> {
        if slot >= self.m.len() {
            return Err(OptimError::Mismatch(format!(
                "slot {slot} out of range for {} parameters",
                self.m.len()
            )));
        }
        if grad.len() != param.numel() {
            return Err(OptimError::Mismatch(format!(
                "parameter {name} has {} elements, gradient has {}",
                param.numel(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient {
                param: name.to_string(),
            });
        }
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                let data = param.data_mut();
                for (x, &g) in data.iter_mut().zip(grad) {
                    *x -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let m = &mut self.m[slot];
                let v = &mut self.v[slot];
                if m.is_empty() {
                    m.resize(grad.len(), 0.0);
                    v.resize(grad.len(), 0.0);
                } else if m.len() != grad.len() {
                    return Err(OptimError::Mismatch(format!(
                        "parameter {name} changed size from {} to {}",
                        m.len(),
                        grad.len()
                    )));
                }
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                let data = param.data_mut();
                for i in 0..grad.len() {
                    let g = grad[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}
