//! SGD and Adam with per-epoch learning-rate decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Serializable optimizer settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerParams {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub lr_decay: f64,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        OptimizerParams {
            kind: OptimizerKind::Adam,
            learning_rate: 5e-5,
            lr_decay: 0.8,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Optimizer state. Adam keeps bias-corrected first/second moments per
/// parameter; moments are allocated lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    pub moments_m: Vec<Tensor>,
    pub moments_v: Vec<Tensor>,
}

impl Optimizer {
    pub fn new(params: &OptimizerParams) -> Result<Self> {
        params.validate()?;
        Ok(Optimizer {
            kind: params.kind,
            learning_rate: params.learning_rate,
            lr_decay: params.lr_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            moments_m: Vec::new(),
            moments_v: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64, lr_decay: f64) -> Result<Self> {
        Optimizer::new(&OptimizerParams {
            kind: OptimizerKind::Sgd,
            learning_rate,
            lr_decay,
        })
    }

    pub fn adam(learning_rate: f64, lr_decay: f64) -> Result<Self> {
        Optimizer::new(&OptimizerParams {
            kind: OptimizerKind::Adam,
            learning_rate,
            lr_decay,
        })
    }

    /// Apply one update from the accumulated gradients.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => {
                for p in params.iter_mut() {
                    let g = p.grad.clone();
                    let v = p.value.data_mut();
                    for (x, gi) in v.iter_mut().zip(g.data()) {
                        *x -= self.learning_rate * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.moments_m.is_empty() {
                    for p in params.iter() {
                        self.moments_m.push(Tensor::zeros(p.value.rows(), p.value.cols()));
                        self.moments_v.push(Tensor::zeros(p.value.rows(), p.value.cols()));
                    }
                }
                if self.moments_m.len() != params.len() {
                    return Err(Error::Invariant(format!(
                        "optimizer tracks {} parameters, model has {}",
                        self.moments_m.len(),
                        params.len()
                    )));
                }
                self.step_count += 1;
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (i, p) in params.iter_mut().enumerate() {
                    let g = p.grad.clone();
                    let m = self.moments_m[i].data_mut();
                    let v = self.moments_v[i].data_mut();
                    let x = p.value.data_mut();
                    for j in 0..x.len() {
                        let gj = g.data()[j];
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                        let m_hat = m[j] / bc1;
                        let v_hat = v[j] / bc2;
                        x[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        for p in params.iter() {
            p.value.check_finite("optimizer_step")?;
        }
        Ok(())
    }

    /// Multiply the learning rate by the decay factor (called once per epoch).
    pub fn decay_lr(&mut self) {
        self.learning_rate *= self.lr_decay;
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut ParamSet, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for p in params.iter() {
        for g in p.grad.data() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            for g in p.grad.data_mut() {
                *g *= scale;
            }
        }
    }
    norm
}
