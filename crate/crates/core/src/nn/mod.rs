//! Fixed-architecture neural building blocks with hand-written backward
//! passes, Adam, dropout, losses and finite-difference gradient checking.
//!
//! Every layer stores its parameters as `f64` arrays. A layer's gradient is a
//! value of the same type, so `Module::visit` walks parameters and gradients
//! in lockstep.

mod adam;
mod checkpoint;
mod conv;
mod dropout;
mod gradcheck;
mod linear;
mod loss;
mod mlp;
mod rnn;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use conv::{ConvCache, ConvEncoder};
pub use dropout::Dropout;
pub use gradcheck::{grad_check, GradCheck};
pub use linear::Linear;
pub use loss::{bce_with_logits, prototype_loss, sigmoid, PrototypeLoss};
pub use mlp::{Mlp, MlpCache};
pub use rnn::{BiRnn, BiRnnCache, CellKind, RnnCell};

/// A set of named parameter tensors visited in a fixed order.
pub trait Module {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64]));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn param_count<M: Module + ?Sized>(m: &M) -> usize {
    let mut n = 0;
    m.visit("", &mut |_, _, v| n += v.len());
    n
}

pub fn flatten<M: Module + ?Sized>(m: &M) -> Vec<f64> {
    let mut out = Vec::new();
    m.visit("", &mut |_, _, v| out.extend_from_slice(v));
    out
}

/// Overwrites all parameters from a flat vector in visit order.
pub fn unflatten<M: Module + ?Sized>(m: &mut M, flat: &[f64]) {
    let mut at = 0;
    m.visit_mut("", &mut |_, v| {
        v.copy_from_slice(&flat[at..at + v.len()]);
        at += v.len();
    });
    assert_eq!(at, flat.len(), "flat parameter vector has the wrong length");
}

/// A copy of `m` with every parameter set to zero, used as a gradient buffer.
pub fn zeros_like<M: Module + Clone>(m: &M) -> M {
    let mut g = m.clone();
    g.visit_mut("", &mut |_, v| v.fill(0.0));
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameter snapshot of a module, the unit stored in checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub seed: u64,
    pub tensors: IndexMap<String, Tensor>,
}

impl ParamSet {
    pub fn capture<M: Module + ?Sized>(m: &M, seed: u64) -> Self {
        let mut tensors = IndexMap::new();
        m.visit("", &mut |name, shape, v| {
            tensors.insert(
                name.to_owned(),
                Tensor {
                    shape: shape.to_vec(),
                    data: v.to_vec(),
                },
            );
        });
        ParamSet { seed, tensors }
    }

    /// Copies tensors into `m`, which must have exactly matching names and sizes.
    pub fn restore<M: Module + ?Sized>(&self, m: &mut M) -> Result<()> {
        let mut err = None;
        let mut seen = 0;
        m.visit_mut("", &mut |name, v| match self.tensors.get(name) {
            Some(t) if t.data.len() == v.len() => {
                v.copy_from_slice(&t.data);
                seen += 1;
            }
            Some(t) => {
                err.get_or_insert_with(|| {
                    Error::shape(format!("{name}: have {} values, need {}", t.data.len(), v.len()))
                });
            }
            None => {
                err.get_or_insert_with(|| Error::NotFound(format!("parameter {name}")));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != self.tensors.len() {
            return Err(Error::shape("checkpoint has parameters the model does not"));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.data.len()).sum()
    }
}

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

pub(crate) fn relu(x: f64) -> f64 {
    x.max(0.0)
}
