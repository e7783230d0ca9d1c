use ndarray::{Array1, ArrayView1};
use rand::Rng;

use super::{join, relu, Linear, Module};
use crate::error::{Error, Result};

/// Hidden affine+ReLU layers followed by an output affine with no activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Vec<Linear>,
    pub out: Linear,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input of each hidden layer and of the output layer.
    inputs: Vec<Array1<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array1<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, layers: usize, output: usize) -> Self {
        let mut stack = Vec::with_capacity(layers);
        let mut width = input;
        for _ in 0..layers {
            stack.push(Linear::new(rng, width, hidden));
            width = hidden;
        }
        Mlp {
            hidden: stack,
            out: Linear::new(rng, width, output),
        }
    }

    pub fn from_layers(hidden: Vec<Linear>, out: Linear) -> Result<Self> {
        let mut width = hidden.first().map_or(out.input_dim(), Linear::input_dim);
        for l in hidden.iter().chain(std::iter::once(&out)) {
            if l.input_dim() != width {
                return Err(Error::shape(format!(
                    "layer expects {} inputs but receives {width}",
                    l.input_dim()
                )));
            }
            width = l.output_dim();
        }
        Ok(Mlp { hidden, out })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.out).input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.out.output_dim()
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.hidden.iter().map(Linear::output_dim).collect()
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, MlpCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "mlp expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut h = x.to_owned();
        for layer in &self.hidden {
            let z = layer.forward(h.view());
            inputs.push(h);
            h = z.mapv(relu);
            pre.push(z);
        }
        let y = self.out.forward(h.view());
        inputs.push(h);
        Ok((y, MlpCache { inputs, pre }))
    }

    pub fn backward(&self, cache: &MlpCache, dy: ArrayView1<'_, f64>, grad: &mut Mlp) -> Array1<f64> {
        let n = self.hidden.len();
        let mut d = self.out.backward(cache.inputs[n].view(), dy, &mut grad.out);
        for k in (0..n).rev() {
            d.zip_mut_with(&cache.pre[k], |g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            d = self.hidden[k].backward(cache.inputs[k].view(), d.view(), &mut grad.hidden[k]);
        }
        d
    }

    /// Smallest |pre-activation| seen in a forward pass; inputs this close to
    /// a ReLU kink make finite differences unreliable.
    pub fn min_abs_preactivation(cache: &MlpCache) -> f64 {
        cache
            .pre
            .iter()
            .flat_map(|z| z.iter())
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

impl Module for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (i, l) in self.hidden.iter().enumerate() {
            l.visit(&join(prefix, &format!("hidden{i}")), f);
        }
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, l) in self.hidden.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("hidden{i}")), f);
        }
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param_count;
    use ndarray::{array, Array2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Linear {
        Linear {
            w: Array2::eye(n),
            b: Array1::zeros(n),
        }
    }

    #[test]
    fn identity_on_nonnegative_input() {
        let mlp = Mlp::from_layers(vec![identity(3)], identity(3)).unwrap();
        let x = array![0.0, 1.5, 2.0];
        assert_eq!(mlp.forward(x.view()).unwrap().0, x);
    }

    #[test]
    fn three_hidden_layers_of_512() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&mut rng, 1536, 512, 3, 1);
        assert_eq!(mlp.hidden_dims(), vec![512, 512, 512]);
        let (_, cache) = mlp.forward(Array1::ones(1536).view()).unwrap();
        assert!(cache.pre.iter().all(|z| z.len() == 512));
        // 1536*512+512 + 2*(512*512+512) + 512+1
        assert_eq!(param_count(&mlp), 1_312_769);
    }

    #[test]
    fn matches_explicit_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut rng, 5, 4, 2, 2);
        let x = array![0.1, -0.4, 0.8, 0.3, -1.2];
        let (y, _) = mlp.forward(x.view()).unwrap();

        let mut h: Vec<f64> = x.to_vec();
        for layer in mlp.hidden.iter().chain(std::iter::once(&mlp.out)) {
            let mut next = vec![0.0; layer.output_dim()];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = layer.b[o];
                for (i, hi) in h.iter().enumerate() {
                    s += layer.w[[o, i]] * hi;
                }
                *slot = s;
            }
            let is_out = std::ptr::eq(layer, &mlp.out);
            h = if is_out { next } else { next.into_iter().map(|v| v.max(0.0)).collect() };
        }
        for (a, b) in y.iter().zip(&h) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(Mlp::from_layers(vec![Linear::new(&mut rng, 3, 4)], Linear::new(&mut rng, 5, 1)).is_err());
        let mlp = Mlp::new(&mut rng, 3, 4, 1, 1);
        assert!(mlp.forward(Array1::zeros(2).view()).is_err());
    }
}
