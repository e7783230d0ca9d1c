use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::{glorot, join, Module};

/// Affine map `y = W x + b` with `W` of shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        let w = Array2::from_shape_vec((output, input), glorot(rng, input, output, input * output))
            .expect("shape matches length");
        Linear {
            w,
            b: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.w.dot(&x) + &self.b
    }

    /// Rows of `x` are independent inputs.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView1<'_, f64>,
        dy: ArrayView1<'_, f64>,
        grad: &mut Linear,
    ) -> Array1<f64> {
        for (mut row, &g) in grad.w.rows_mut().into_iter().zip(dy.iter()) {
            if g != 0.0 {
                row.scaled_add(g, &x);
            }
        }
        grad.b += &dy;
        self.w.t().dot(&dy)
    }

    pub fn backward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        dy: ArrayView2<'_, f64>,
        grad: &mut Linear,
    ) -> Array2<f64> {
        ndarray::linalg::general_mat_mul(1.0, &dy.t(), &x, 1.0, &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w)
    }
}

impl Module for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "w"), self.w.shape(), self.w.as_slice().expect("standard layout"));
        f(&join(prefix, "b"), self.b.shape(), self.b.as_slice().expect("standard layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "w"), self.w.as_slice_mut().expect("standard layout"));
        f(&join(prefix, "b"), self.b.as_slice_mut().expect("standard layout"));
    }
}
