//! Randomised gradient checks for every differentiable layer.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    bce_with_logits, flatten, grad_check, prototype_loss, unflatten, zeros_like, BiRnn, CellKind, ConvEncoder,
    GradCheck, Linear, Mlp, Module,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Linear,
    Mlp,
    Conv,
    Lstm,
    Gru,
    Gcn,
    Bce,
    Prototype,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Linear,
        LayerKind::Mlp,
        LayerKind::Conv,
        LayerKind::Lstm,
        LayerKind::Gru,
        LayerKind::Gcn,
        LayerKind::Bce,
        LayerKind::Prototype,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Linear => "linear",
            LayerKind::Mlp => "mlp",
            LayerKind::Conv => "conv",
            LayerKind::Lstm => "lstm",
            LayerKind::Gru => "gru",
            LayerKind::Gcn => "gcn",
            LayerKind::Bce => "bce",
            LayerKind::Prototype => "prototype",
        }
    }
}

pub const EPS: f64 = 1e-6;
const MAX_DRAWS: u64 = 200;

fn uniform(rng: &mut ChaCha8Rng, n: usize, a: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-a..a)).collect()
}

fn matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, a: f64) -> Array2<f64> {
    Array2::from_shape_vec((r, c), uniform(rng, r * c, a)).expect("shape")
}

/// Checks gradients w.r.t. both parameters and inputs of a module whose
/// scalar loss is `<r, forward(x)>` for a random `r`.
fn check_module<M, F, B>(model: &M, x: &[f64], r: &Array1<f64>, forward: F, backward: B) -> GradCheck
where
    M: Module + Clone,
    F: Fn(&M, &[f64]) -> Array1<f64>,
    B: Fn(&M, &[f64], &Array1<f64>, &mut M) -> Vec<f64>,
{
    let np = flatten(model).len();
    let mut point = flatten(model);
    point.extend_from_slice(x);
    let mut scratch = model.clone();
    grad_check(
        |v| {
            unflatten(&mut scratch, &v[..np]);
            let out = forward(&scratch, &v[np..]);
            let loss = out.dot(r);
            let mut g = zeros_like(&scratch);
            let dx = backward(&scratch, &v[np..], r, &mut g);
            let mut grad = flatten(&g);
            grad.extend(dx);
            (loss, grad)
        },
        &point,
        EPS,
    )
}

/// Draws one well-conditioned random instance of `kind` from `seed` and
/// checks it. Instances with a ReLU/max kink closer than `10 * EPS` are
/// redrawn.
pub fn check_layer(kind: LayerKind, seed: u64) -> GradCheck {
    for draw in 0..MAX_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(draw));
        if let Some(r) = try_instance(kind, &mut rng) {
            return r;
        }
    }
    panic!("no well-conditioned {} instance found for seed {seed}", kind.as_str());
}

fn try_instance(kind: LayerKind, rng: &mut ChaCha8Rng) -> Option<GradCheck> {
    let margin = 100.0 * EPS;
    match kind {
        LayerKind::Linear => {
            let (i, o) = (rng.random_range(1..6), rng.random_range(1..6));
            let lin = Linear::new(rng, i, o);
            let x = uniform(rng, i, 1.0);
            let r = Array1::from(uniform(rng, o, 1.0));
            Some(check_module(
                &lin,
                &x,
                &r,
                |m, x| m.forward(ArrayView1::from(x)),
                |m, x, r, g| m.backward(ArrayView1::from(x), r.view(), g).to_vec(),
            ))
        }
        LayerKind::Mlp => {
            let (i, h, o) = (rng.random_range(1..5), rng.random_range(2..6), rng.random_range(1..4));
            let layers = rng.random_range(1..4);
            let mlp = Mlp::new(rng, i, h, layers, o);
            let x = uniform(rng, i, 1.0);
            let (_, cache) = mlp.forward(ArrayView1::from(&x[..])).ok()?;
            if Mlp::min_abs_preactivation(&cache) < margin {
                return None;
            }
            let r = Array1::from(uniform(rng, o, 1.0));
            Some(check_module(
                &mlp,
                &x,
                &r,
                |m, x| m.forward(ArrayView1::from(x)).expect("shape").0,
                |m, x, r, g| {
                    let (_, c) = m.forward(ArrayView1::from(x)).expect("shape");
                    m.backward(&c, r.view(), g).to_vec()
                },
            ))
        }
        LayerKind::Conv => {
            let d = rng.random_range(1..4);
            let widths: Vec<usize> = match rng.random_range(0..3) {
                0 => vec![1, 2],
                1 => vec![2, 3],
                _ => vec![1, 3, 4],
            };
            let kernels = rng.random_range(1..4);
            let t = rng.random_range(1..7);
            let conv = ConvEncoder::new(rng, d, &widths, kernels).ok()?;
            let x = uniform(rng, t * d, 1.0);
            let view = ArrayView2::from_shape((t, d), &x[..]).ok()?;
            let (_, cache) = conv.forward(view).ok()?;
            if conv.min_kink_margin(&cache) < margin {
                return None;
            }
            let r = Array1::from(uniform(rng, conv.output_dim(), 1.0));
            Some(check_module(
                &conv,
                &x,
                &r,
                |m, x| {
                    let v = ArrayView2::from_shape((x.len() / d, d), x).expect("shape");
                    m.forward(v).expect("shape").0
                },
                |m, x, r, g| {
                    let v = ArrayView2::from_shape((x.len() / d, d), x).expect("shape");
                    let (_, c) = m.forward(v).expect("shape");
                    let dx = m.backward(&c, r.view(), g, true).expect("input grad");
                    dx.iter().copied().collect()
                },
            ))
        }
        LayerKind::Lstm | LayerKind::Gru => {
            let cell = if kind == LayerKind::Lstm { CellKind::Lstm } else { CellKind::Gru };
            let (d, h, t) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..5));
            let mut rnn = BiRnn::new(rng, cell, d, h).ok()?;
            // non-zero biases so every path is exercised
            rnn.visit_mut("", &mut |name, v| {
                if name.ends_with("b_ih") || name.ends_with("b_hh") {
                    for b in v.iter_mut() {
                        *b = rng.random_range(-0.5..0.5);
                    }
                }
            });
            let x = uniform(rng, t * d, 1.0);
            let r = Array1::from(uniform(rng, 2 * h, 1.0));
            Some(check_module(
                &rnn,
                &x,
                &r,
                |m, x| {
                    let v = ArrayView2::from_shape((x.len() / d, d), x).expect("shape");
                    m.forward(v).expect("shape").0
                },
                |m, x, r, g| {
                    let v = ArrayView2::from_shape((x.len() / d, d), x).expect("shape");
                    let (_, c) = m.forward(v).expect("shape");
                    let dx = m.backward(&c, r.view(), g, true).expect("input grad");
                    dx.iter().copied().collect()
                },
            ))
        }
        LayerKind::Gcn => crate::graph::gcn_check_instance(rng, margin),
        LayerKind::Bce => {
            let n = rng.random_range(1..6);
            let z = uniform(rng, n, 4.0);
            let y: Vec<f64> = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
            Some(grad_check(
                |v| {
                    let mut loss = 0.0;
                    let mut g = Vec::with_capacity(v.len());
                    for (&z, &y) in v.iter().zip(&y) {
                        let (l, d) = bce_with_logits(z, y);
                        loss += l;
                        g.push(d);
                    }
                    (loss, g)
                },
                &z,
                EPS,
            ))
        }
        LayerKind::Prototype => {
            let (nq, k, d) = (rng.random_range(1..5), rng.random_range(2..5), rng.random_range(1..4));
            let q = matrix(rng, nq, d, 1.0);
            let p = matrix(rng, k, d, 1.0);
            let labels: Vec<usize> = (0..nq).map(|_| rng.random_range(0..k)).collect();
            let mut point: Vec<f64> = q.iter().copied().collect();
            point.extend(p.iter().copied());
            Some(grad_check(
                |v| {
                    let qv = ArrayView2::from_shape((nq, d), &v[..nq * d]).expect("shape");
                    let pv = ArrayView2::from_shape((k, d), &v[nq * d..]).expect("shape");
                    let out = prototype_loss(qv, &labels, pv).expect("valid");
                    let mut g: Vec<f64> = out.d_queries.iter().copied().collect();
                    g.extend(out.d_prototypes.iter().copied());
                    (out.loss, g)
                },
                &point,
                EPS,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_a_few_instances() {
        for kind in LayerKind::ALL {
            for seed in 0..3 {
                let r = check_layer(kind, seed);
                assert!(r.checked > 0, "{kind:?}");
                assert!(r.max_rel_error < 1e-4, "{kind:?} seed {seed}: {r:?}");
            }
        }
    }
}
