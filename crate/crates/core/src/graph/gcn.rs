use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{flatten, grad_check, join, unflatten, zeros_like, GradCheck, Linear, Module};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// K stacked layers of h_u = f(sum over v in N(u) of (W x_v + b)).
///
/// Neighbourhoods come from the caller and are expected to include the
/// node itself. No degree normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Gcn {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl GcnCache {
    pub fn min_abs_preactivation(&self) -> f64 {
        self.pre.iter().flat_map(|p| p.iter()).fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

impl Gcn {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, layers: usize) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(Error::invalid("gcn needs at least one layer of positive width"));
        }
        let mut out = Vec::with_capacity(layers);
        for k in 0..layers {
            out.push(Linear::new(rng, if k == 0 { input } else { hidden }, hidden));
        }
        Ok(Gcn {
            layers: out,
            activation: Activation::Relu,
        })
    }

    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        Gcn {
            layers: (0..layers)
                .map(|k| Linear::zeros(if k == 0 { input } else { hidden }, hidden))
                .collect(),
            activation: Activation::Relu,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Linear::output_dim)
    }

    fn act(&self, z: f64) -> f64 {
        match self.activation {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    pub fn forward(&self, adj: &[Vec<usize>], x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, GcnCache)> {
        if adj.len() != x.nrows() {
            return Err(Error::shape(format!("{} neighbourhoods for {} nodes", adj.len(), x.nrows())));
        }
        let mut h = x.to_owned();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if h.ncols() != layer.input_dim() {
                return Err(Error::shape(format!(
                    "gcn layer expects {} features, got {}",
                    layer.input_dim(),
                    h.ncols()
                )));
            }
            let z = layer.forward_batch(h.view());
            let mut p = Array2::zeros(z.raw_dim());
            for (u, nbrs) in adj.iter().enumerate() {
                let mut row = p.row_mut(u);
                for &v in nbrs {
                    row += &z.row(v);
                }
            }
            let next = p.mapv(|v| self.act(v));
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(p);
        }
        Ok((h, GcnCache { inputs, pre }))
    }

    /// Accumulates parameter gradients and returns dL/dx when asked.
    pub fn backward(
        &self,
        adj: &[Vec<usize>],
        cache: &GcnCache,
        dout: ArrayView2<'_, f64>,
        grad: &mut Gcn,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let mut dh = dout.to_owned();
        for k in (0..self.layers.len()).rev() {
            let mut dp = dh;
            if self.activation == Activation::Relu {
                dp.zip_mut_with(&cache.pre[k], |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            // neighbourhoods are symmetric, so dZ_v = sum over u in N(v) of dP_u
            let mut dz = Array2::zeros(dp.raw_dim());
            for (v, nbrs) in adj.iter().enumerate() {
                let mut row = dz.row_mut(v);
                for &u in nbrs {
                    row += &dp.row(u);
                }
            }
            let layer = &self.layers[k];
            layer.backward_batch(cache.inputs[k].view(), dz.view(), &mut grad.layers[k]);
            if k == 0 && !want_input_grad {
                return None;
            }
            dh = dz.dot(&layer.w);
        }
        Some(dh)
    }
}

impl Module for Gcn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{k}")), f);
        }
    }
}

/// Random symmetric neighbourhoods with self-loops on `n` nodes.
pub(crate) fn random_neighbourhoods(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
    }
    for a in &mut adj {
        a.sort_unstable();
    }
    adj
}

pub(crate) fn gcn_check_instance(rng: &mut ChaCha8Rng, margin: f64) -> Option<GradCheck> {
    let n = rng.random_range(1..7);
    let (m, d, k) = (rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..4));
    let adj = random_neighbourhoods(rng, n, 0.4);
    let mut gcn = Gcn::new(rng, m, d, k).ok()?;
    gcn.visit_mut("", &mut |name, v| {
        if name.ends_with(".b") {
            v.iter_mut().for_each(|b| *b = rng.random_range(-0.3..0.3));
        }
    });
    let x: Vec<f64> = (0..n * m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let xv = ArrayView2::from_shape((n, m), &x[..]).ok()?;
    let (_, cache) = gcn.forward(&adj, xv).ok()?;
    if cache.min_abs_preactivation() < margin {
        return None;
    }
    let r = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let np = flatten(&gcn).len();
    let mut point = flatten(&gcn);
    point.extend_from_slice(&x);
    let mut scratch = gcn.clone();
    Some(grad_check(
        |v| {
            unflatten(&mut scratch, &v[..np]);
            let xv = ArrayView2::from_shape((n, m), &v[np..]).expect("shape");
            let (h, cache) = scratch.forward(&adj, xv).expect("shape");
            let loss = (&h * &r).sum();
            let mut g = zeros_like(&scratch);
            let dx = scratch.backward(&adj, &cache, r.view(), &mut g, true).expect("input grad");
            let mut out = flatten(&g);
            out.extend(dx.iter().copied());
            (loss, out)
        },
        &point,
        1e-6,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};
    use rand::SeedableRng;

    /// Dense reference: explicit loops over all node pairs with an
    /// adjacency indicator.
    fn dense(adj: &[Vec<usize>], x: &Array2<f64>, gcn: &Gcn) -> Array2<f64> {
        let n = adj.len();
        let mut h = x.clone();
        for layer in &gcn.layers {
            let (out, inp) = (layer.w.nrows(), layer.w.ncols());
            let mut next = Array2::zeros((n, out));
            for u in 0..n {
                for v in 0..n {
                    if !adj[u].contains(&v) {
                        continue;
                    }
                    for o in 0..out {
                        let mut s = layer.b[o];
                        for i in 0..inp {
                            s += layer.w[[o, i]] * h[[v, i]];
                        }
                        next[[u, o]] += s;
                    }
                }
            }
            if gcn.activation == Activation::Relu {
                next.mapv_inplace(|v: f64| v.max(0.0));
            }
            h = next;
        }
        h
    }

    #[test]
    fn path_graph_hand_value() {
        let adj = vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]];
        let gcn = Gcn {
            layers: vec![Linear {
                w: array![[1.0]],
                b: array![0.0],
            }],
            activation: Activation::Relu,
        };
        let (h, _) = gcn.forward(&adj, array![[1.0], [2.0], [3.0]].view()).unwrap();
        assert_eq!(h.column(0).to_vec(), vec![3.0, 6.0, 5.0]);
    }

    #[test]
    fn single_node_identity() {
        let gcn = Gcn {
            layers: vec![Linear {
                w: Array2::eye(3),
                b: Array1::zeros(3),
            }],
            activation: Activation::Identity,
        };
        let x = array![[0.5, -1.0, 2.0]];
        assert_eq!(gcn.forward(&[vec![0]], x.view()).unwrap().0, x);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..21);
            let k = rng.random_range(1..4);
            let adj = random_neighbourhoods(&mut rng, n, 0.3);
            let gcn = Gcn::new(&mut rng, 5, 4, k).unwrap();
            let x = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
            let fast = gcn.forward(&adj, x.view()).unwrap().0;
            let slow = dense(&adj, &x, &gcn);
            let err = (&fast - &slow).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-9, "{err}");
        }
    }

    #[test]
    fn relabeling_permutes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 9;
        let adj = random_neighbourhoods(&mut rng, n, 0.4);
        let gcn = Gcn::new(&mut rng, 3, 4, 3).unwrap();
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut inv = vec![0; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        // node i in the new graph is old node perm[i]
        let adj2: Vec<Vec<usize>> = perm.iter().map(|&old| adj[old].iter().map(|&v| inv[v]).collect()).collect();
        let x2 = x.select(ndarray::Axis(0), &perm);
        let h = gcn.forward(&adj, x.view()).unwrap().0;
        let h2 = gcn.forward(&adj2, x2.view()).unwrap().0;
        for i in 0..n {
            for c in 0..4 {
                assert!((h2[[i, c]] - h[[perm[i], c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut done = 0;
        while done < 5 {
            if let Some(r) = gcn_check_instance(&mut rng, 1e-4) {
                assert!(r.max_rel_error < 1e-4, "{r:?}");
                done += 1;
            }
        }
    }
}
