//! Dense 2-D tensor computation with reverse-mode differentiation.
//!
//! A [`Graph`] records forward operations define-by-run; [`Graph::backward`]
//! replays them in reverse, accumulating gradients into [`Parameter`]s.
//! All storage is f64 and every operation traps non-finite results.
//! Reduction orders are fixed, so identical inputs give identical bits.

mod gradcheck;
mod graph;
mod optim;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, Value};
pub use optim::{clip_global_norm, OptimizerKind, OptimizerParams, Optimizer};
pub use tensor::Tensor;

use crate::error::Result;

/// A named trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// The set of parameters owned by one model, indexed by creation order.
///
/// Every set carries a process-unique token so a computation graph can tell
/// which set a recorded parameter leaf belongs to. Clones get a fresh token:
/// a cloned set is an independent collection of parameters.
#[derive(Debug)]
pub struct ParamSet {
    set_id: u64,
    params: Vec<Parameter>,
}

/// Index of a parameter within its [`ParamSet`].
pub type ParamId = usize;

fn fresh_set_id() -> u64 {
    use std::sync::atomic::{AtomicU64, Ordering};
    static NEXT: AtomicU64 = AtomicU64::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

impl Clone for ParamSet {
    fn clone(&self) -> Self {
        ParamSet {
            set_id: fresh_set_id(),
            params: self.params.clone(),
        }
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        ParamSet::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            set_id: fresh_set_id(),
            params: Vec::new(),
        }
    }

    pub(crate) fn set_id(&self) -> u64 {
        self.set_id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Total number of scalar entries across all parameters.
    pub fn entry_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Accumulate `g` into the gradient of `id`.
    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) -> Result<()> {
        self.params[id].grad.add_assign(g)
    }
}
