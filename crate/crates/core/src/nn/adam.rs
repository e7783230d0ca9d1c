use serde::{Deserialize, Serialize};

use super::Module;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update of `params` from `grads` (same module type). A non-finite
/// gradient aborts the step before anything is modified.
pub fn adam_step<M: Module + ?Sized>(params: &mut M, grads: &M, state: &mut AdamState) -> Result<()> {
    let mut flat = Vec::new();
    let mut bad = None;
    grads.visit("", &mut |name, _, g| {
        if bad.is_none() && g.iter().any(|x| !x.is_finite()) {
            bad = Some(name.to_owned());
        }
        flat.extend_from_slice(g);
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    if state.m.is_empty() {
        state.m = vec![0.0; flat.len()];
        state.v = vec![0.0; flat.len()];
    }
    if state.m.len() != flat.len() {
        return Err(Error::shape("optimizer state does not match parameter count"));
    }
    state.t += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.t as i32);
    let bc2 = 1.0 - c.beta2.powi(state.t as i32);
    for ((m, v), &g) in state.m.iter_mut().zip(state.v.iter_mut()).zip(&flat) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    }
    let mut at = 0;
    let (ms, vs) = (&state.m, &state.v);
    params.visit_mut("", &mut |_, p| {
        for x in p.iter_mut() {
            let mh = ms[at] / bc1;
            let vh = vs[at] / bc2;
            *x -= c.lr * mh / (vh.sqrt() + c.eps);
            at += 1;
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    fn one(v: f64) -> Linear {
        Linear {
            w: array![[v]],
            b: array![v],
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one(0.5);
        let mut s = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &one(0.0), &mut s).unwrap();
        assert_eq!(p, one(0.5));
    }

    #[test]
    fn first_step_value() {
        let mut p = one(1.0);
        let mut s = AdamState::new(AdamConfig::default());
        adam_step(&mut p, &one(1.0), &mut s).unwrap();
        let expect = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.w[[0, 0]] - expect).abs() < 1e-15);
        assert!((p.b[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut p = one(1.0);
        let mut g = one(0.0);
        g.b[0] = f64::NAN;
        let mut s = AdamState::new(AdamConfig::default());
        let err = adam_step(&mut p, &g, &mut s).unwrap_err().to_string();
        assert!(err.contains('b'), "{err}");
        assert_eq!(p, one(1.0));
    }

    #[test]
    fn repeated_runs_agree() {
        let run = || {
            let mut p = one(0.3);
            let mut s = AdamState::new(AdamConfig::default());
            for i in 0..20 {
                adam_step(&mut p, &one((i as f64).sin()), &mut s).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
