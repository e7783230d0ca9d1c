use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use super::{join, Linear, Module};
use crate::error::{Error, Result};

/// Multi-width text convolution with ReLU and max-over-time pooling.
///
/// Each width `k` owns a filter bank of shape `kernels x (k * dim)`; a window
/// is the concatenation of `k` consecutive token rows. The output holds one
/// value per (width, kernel), widths in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub widths: Vec<usize>,
    pub banks: Vec<Linear>,
    dim: usize,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    /// Input right-padded with zero rows to at least the largest width.
    padded: Array2<f64>,
    original_len: usize,
    /// Per width, per kernel: winning window start and its raw score.
    winners: Vec<Vec<(usize, f64)>>,
}

impl ConvEncoder {
    pub fn new<R: Rng>(rng: &mut R, dim: usize, widths: &[usize], kernels: usize) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || kernels == 0 || dim == 0 {
            return Err(Error::invalid("conv encoder needs positive widths, kernels and dim"));
        }
        let banks = widths
            .iter()
            .map(|&k| Linear::new(rng, k * dim, kernels))
            .collect();
        Ok(ConvEncoder {
            widths: widths.to_vec(),
            banks,
            dim,
        })
    }

    pub fn from_banks(dim: usize, widths: Vec<usize>, banks: Vec<Linear>) -> Result<Self> {
        if widths.len() != banks.len() {
            return Err(Error::shape("one filter bank per width"));
        }
        for (&k, b) in widths.iter().zip(&banks) {
            if b.input_dim() != k * dim {
                return Err(Error::shape(format!(
                    "width {k} bank expects {} inputs, not {}",
                    k * dim,
                    b.input_dim()
                )));
            }
        }
        Ok(ConvEncoder { widths, banks, dim })
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn kernels(&self) -> usize {
        self.banks[0].output_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.banks.iter().map(Linear::output_dim).sum()
    }

    fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    pub fn forward(&self, tokens: ArrayView2<'_, f64>) -> Result<(Array1<f64>, ConvCache)> {
        if tokens.ncols() != self.dim {
            return Err(Error::shape(format!(
                "conv expects token dim {}, got {}",
                self.dim,
                tokens.ncols()
            )));
        }
        if tokens.nrows() == 0 {
            return Err(Error::invalid("conv input has no tokens"));
        }
        let t = tokens.nrows().max(self.max_width());
        let mut padded = Array2::zeros((t, self.dim));
        padded.slice_mut(s![..tokens.nrows(), ..]).assign(&tokens);

        let mut out = Vec::with_capacity(self.output_dim());
        let mut winners = Vec::with_capacity(self.widths.len());
        for (&k, bank) in self.widths.iter().zip(&self.banks) {
            let windows = window_matrix(&padded, k);
            let scores = bank.forward_batch(windows.view());
            let mut best = Vec::with_capacity(bank.output_dim());
            for col in scores.columns() {
                let (pos, val) = col
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (p, &v)| if v > acc.1 { (p, v) } else { acc });
                out.push(val.max(0.0));
                best.push((pos, val));
            }
            winners.push(best);
        }
        Ok((
            Array1::from(out),
            ConvCache {
                padded,
                original_len: tokens.nrows(),
                winners,
            },
        ))
    }

    /// Accumulates filter gradients; returns `dL/dtokens` for the unpadded
    /// rows when `want_input_grad` is set.
    pub fn backward(
        &self,
        cache: &ConvCache,
        dout: ArrayView1<'_, f64>,
        grad: &mut ConvEncoder,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let d = self.dim;
        let mut dx = want_input_grad.then(|| Array2::zeros(cache.padded.raw_dim()));
        let mut at = 0;
        for (wi, (&k, bank)) in self.widths.iter().zip(&self.banks).enumerate() {
            let gbank = &mut grad.banks[wi];
            for (j, &(pos, score)) in cache.winners[wi].iter().enumerate() {
                let g = dout[at + j];
                if score <= 0.0 || g == 0.0 {
                    continue;
                }
                let window = cache.padded.slice(s![pos..pos + k, ..]);
                let window = window.as_standard_layout();
                let flat = ArrayView1::from(window.as_slice().expect("contiguous"));
                gbank.w.row_mut(j).scaled_add(g, &flat);
                gbank.b[j] += g;
                if let Some(dx) = dx.as_mut() {
                    let wrow = bank.w.row(j);
                    let wrow = wrow.into_shape_with_order((k, d)).expect("k * d weights");
                    dx.slice_mut(s![pos..pos + k, ..]).scaled_add(g, &wrow);
                }
            }
            at += bank.output_dim();
        }
        dx.map(|m| m.slice(s![..cache.original_len, ..]).to_owned())
    }

    /// Smallest margin to a kink: |winning score| and the gap between the
    /// best and second-best window, over all kernels.
    pub fn min_kink_margin(&self, cache: &ConvCache) -> f64 {
        let mut margin = f64::INFINITY;
        for (wi, (&k, bank)) in self.widths.iter().zip(&self.banks).enumerate() {
            let scores = bank.forward_batch(window_matrix(&cache.padded, k).view());
            for (j, col) in scores.columns().into_iter().enumerate() {
                let (pos, best) = cache.winners[wi][j];
                margin = margin.min(best.abs());
                for (p, &v) in col.iter().enumerate() {
                    if p != pos {
                        margin = margin.min(best - v);
                    }
                }
            }
        }
        margin
    }
}

/// Rows are the flattened `k`-token windows of `x`.
fn window_matrix(x: &Array2<f64>, k: usize) -> Array2<f64> {
    let (t, d) = x.dim();
    let n = t + 1 - k;
    let flat = x.as_slice().expect("padded input is contiguous");
    let mut out = Array2::zeros((n, k * d));
    for (p, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&ArrayView1::from(&flat[p * d..(p + k) * d]));
    }
    out
}

impl Module for ConvEncoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (k, b) in self.widths.iter().zip(&self.banks) {
            b.visit(&join(prefix, &format!("width{k}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (k, b) in self.widths.iter().zip(self.banks.iter_mut()) {
            b.visit_mut(&join(prefix, &format!("width{k}")), f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_dim_is_widths_times_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ConvEncoder::new(&mut rng, 768, &[3, 4, 5, 6], 192).unwrap();
        assert_eq!(enc.output_dim(), 768);
        let x = Array2::from_shape_fn((9, 768), |(i, j)| ((i * 7 + j) % 13) as f64 / 13.0 - 0.5);
        assert_eq!(enc.forward(x.view()).unwrap().0.len(), 768);
        // shorter than the widest filter: padded, still one value per kernel
        assert_eq!(enc.forward(x.slice(s![..2, ..])).unwrap().0.len(), 768);
    }

    #[test]
    fn max_over_time_hand_example() {
        let bank = Linear {
            w: array![[1.0, 0.0]],
            b: array![0.0],
        };
        let enc = ConvEncoder::from_banks(2, vec![1], vec![bank]).unwrap();
        let x = array![[0.2, 5.0], [0.9, -1.0], [0.1, 3.0]];
        assert_eq!(enc.forward(x.view()).unwrap().0, array![0.9]);
    }

    #[test]
    fn single_window_is_relu_of_affine() {
        let bank = Linear {
            w: array![[2.0, -1.0], [-1.0, 0.0]],
            b: array![0.5, 0.1],
        };
        let enc = ConvEncoder::from_banks(2, vec![1], vec![bank]).unwrap();
        let x = array![[1.0, 1.0]];
        assert_eq!(enc.forward(x.view()).unwrap().0, array![1.5, 0.0]);
    }

    #[test]
    fn dim_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = ConvEncoder::new(&mut rng, 4, &[2], 3).unwrap();
        assert!(enc.forward(Array2::zeros((5, 3)).view()).is_err());
    }
}
