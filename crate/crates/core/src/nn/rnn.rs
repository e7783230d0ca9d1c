use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot, join, Module};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// One direction of a recurrent encoder.
///
/// LSTM gate blocks are ordered (input, forget, cell, output); GRU blocks
/// are (reset, update, new) with the reset gate applied to the recurrent
/// part of the candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCell {
    pub kind: CellKind,
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub b_ih: Array1<f64>,
    pub b_hh: Array1<f64>,
}

fn sigmoid(x: f64) -> f64 {
    super::sigmoid(x)
}

#[derive(Debug, Clone)]
struct Step {
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    /// Activated gates (LSTM: i, f, g, o; GRU: r, z, n).
    gates: Array1<f64>,
    /// GRU only: recurrent candidate term W_hn h + b_hn.
    gh_n: Array1<f64>,
    /// LSTM only: tanh(c_t).
    tanh_c: Array1<f64>,
}

impl RnnCell {
    pub fn new<R: Rng>(rng: &mut R, kind: CellKind, input: usize, hidden: usize) -> Self {
        let g = kind.gates() * hidden;
        RnnCell {
            kind,
            w_ih: Array2::from_shape_vec((g, input), glorot(rng, input, g, g * input)).expect("shape"),
            w_hh: Array2::from_shape_vec((g, hidden), glorot(rng, hidden, g, g * hidden)).expect("shape"),
            b_ih: Array1::zeros(g),
            b_hh: Array1::zeros(g),
        }
    }

    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        let g = kind.gates() * hidden;
        RnnCell {
            kind,
            w_ih: Array2::zeros((g, input)),
            w_hh: Array2::zeros((g, hidden)),
            b_ih: Array1::zeros(g),
            b_hh: Array1::zeros(g),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    /// Runs over `tokens` in the given row order and returns the final
    /// hidden state.
    fn run(&self, tokens: ArrayView2<'_, f64>, order: &[usize]) -> (Array1<f64>, Vec<Step>) {
        let h_dim = self.hidden();
        let projected = tokens.dot(&self.w_ih.t()) + &self.b_ih;
        let mut h = Array1::zeros(h_dim);
        let mut c = Array1::zeros(h_dim);
        let mut steps = Vec::with_capacity(order.len());
        for &t in order {
            let gi = projected.row(t);
            let gh = self.w_hh.dot(&h) + &self.b_hh;
            match self.kind {
                CellKind::Lstm => {
                    let a = &gi + &gh;
                    let mut gates = Array1::zeros(4 * h_dim);
                    for (q, (&x, slot)) in a.iter().zip(gates.iter_mut()).enumerate() {
                        *slot = if q / h_dim == 2 { x.tanh() } else { sigmoid(x) };
                    }
                    let (i, f, g, o) = lstm_blocks(&gates, h_dim);
                    let c_new = &f * &c + &i * &g;
                    let tanh_c = c_new.mapv(f64::tanh);
                    let h_new = &o * &tanh_c;
                    steps.push(Step {
                        h_prev: std::mem::replace(&mut h, h_new),
                        c_prev: std::mem::replace(&mut c, c_new),
                        gates,
                        gh_n: Array1::zeros(0),
                        tanh_c,
                    });
                }
                CellKind::Gru => {
                    let mut gates = Array1::zeros(3 * h_dim);
                    let gh_n = gh.slice(s![2 * h_dim..]).to_owned();
                    for q in 0..h_dim {
                        let r = sigmoid(gi[q] + gh[q]);
                        let z = sigmoid(gi[h_dim + q] + gh[h_dim + q]);
                        let n = (gi[2 * h_dim + q] + r * gh_n[q]).tanh();
                        gates[q] = r;
                        gates[h_dim + q] = z;
                        gates[2 * h_dim + q] = n;
                    }
                    let z = gates.slice(s![h_dim..2 * h_dim]);
                    let n = gates.slice(s![2 * h_dim..]);
                    let h_new = Array1::from_shape_fn(h_dim, |q| (1.0 - z[q]) * n[q] + z[q] * h[q]);
                    steps.push(Step {
                        h_prev: std::mem::replace(&mut h, h_new),
                        c_prev: Array1::zeros(0),
                        gates,
                        gh_n,
                        tanh_c: Array1::zeros(0),
                    });
                }
            }
        }
        (h, steps)
    }

    /// Backpropagates `dh_final` through the recorded steps.
    fn backprop(
        &self,
        tokens: ArrayView2<'_, f64>,
        order: &[usize],
        steps: &[Step],
        dh_final: ArrayView1<'_, f64>,
        grad: &mut RnnCell,
        mut dx: Option<&mut Array2<f64>>,
    ) {
        let h_dim = self.hidden();
        let mut dh = dh_final.to_owned();
        let mut dc: Array1<f64> = Array1::zeros(h_dim);
        for (step, &t) in steps.iter().zip(order).rev() {
            let x = tokens.row(t);
            let (dgi, dgh) = match self.kind {
                CellKind::Lstm => {
                    let (i, f, g, o) = lstm_blocks(&step.gates, h_dim);
                    let mut da = Array1::zeros(4 * h_dim);
                    for q in 0..h_dim {
                        let tc = step.tanh_c[q];
                        let d_o = dh[q] * tc;
                        let dcq = dc[q] + dh[q] * o[q] * (1.0 - tc * tc);
                        da[q] = dcq * g[q] * i[q] * (1.0 - i[q]);
                        da[h_dim + q] = dcq * step.c_prev[q] * f[q] * (1.0 - f[q]);
                        da[2 * h_dim + q] = dcq * i[q] * (1.0 - g[q] * g[q]);
                        da[3 * h_dim + q] = d_o * o[q] * (1.0 - o[q]);
                        dc[q] = dcq * f[q];
                    }
                    (da.clone(), da)
                }
                CellKind::Gru => {
                    let mut dgi = Array1::zeros(3 * h_dim);
                    let mut dgh = Array1::zeros(3 * h_dim);
                    let mut dh_prev = Array1::zeros(h_dim);
                    for q in 0..h_dim {
                        let (r, z, n) = (step.gates[q], step.gates[h_dim + q], step.gates[2 * h_dim + q]);
                        let dn = dh[q] * (1.0 - z);
                        let dz = dh[q] * (step.h_prev[q] - n);
                        dh_prev[q] = dh[q] * z;
                        let dan = dn * (1.0 - n * n);
                        let dr = dan * step.gh_n[q];
                        let dar = dr * r * (1.0 - r);
                        let daz = dz * z * (1.0 - z);
                        dgi[q] = dar;
                        dgh[q] = dar;
                        dgi[h_dim + q] = daz;
                        dgh[h_dim + q] = daz;
                        dgi[2 * h_dim + q] = dan;
                        dgh[2 * h_dim + q] = dan * r;
                    }
                    dh = dh_prev;
                    (dgi, dgh)
                }
            };
            outer_add(&mut grad.w_ih, &dgi, x);
            outer_add(&mut grad.w_hh, &dgh, step.h_prev.view());
            grad.b_ih += &dgi;
            grad.b_hh += &dgh;
            if let Some(dx) = dx.as_deref_mut() {
                let g = self.w_ih.t().dot(&dgi);
                dx.row_mut(t).scaled_add(1.0, &g);
            }
            let back = self.w_hh.t().dot(&dgh);
            match self.kind {
                CellKind::Lstm => dh = back,
                CellKind::Gru => dh += &back,
            }
        }
    }
}

fn lstm_blocks(
    gates: &Array1<f64>,
    h: usize,
) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>, ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
    (
        gates.slice(s![..h]),
        gates.slice(s![h..2 * h]),
        gates.slice(s![2 * h..3 * h]),
        gates.slice(s![3 * h..]),
    )
}

fn outer_add(m: &mut Array2<f64>, col: &Array1<f64>, row: ArrayView1<'_, f64>) {
    for (mut r, &c) in m.rows_mut().into_iter().zip(col.iter()) {
        if c != 0.0 {
            r.scaled_add(c, &row);
        }
    }
}

impl Module for RnnCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        f(&join(prefix, "w_ih"), self.w_ih.shape(), self.w_ih.as_slice().expect("layout"));
        f(&join(prefix, "w_hh"), self.w_hh.shape(), self.w_hh.as_slice().expect("layout"));
        f(&join(prefix, "b_ih"), self.b_ih.shape(), self.b_ih.as_slice().expect("layout"));
        f(&join(prefix, "b_hh"), self.b_hh.shape(), self.b_hh.as_slice().expect("layout"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        f(&join(prefix, "w_ih"), self.w_ih.as_slice_mut().expect("layout"));
        f(&join(prefix, "w_hh"), self.w_hh.as_slice_mut().expect("layout"));
        f(&join(prefix, "b_ih"), self.b_ih.as_slice_mut().expect("layout"));
        f(&join(prefix, "b_hh"), self.b_hh.as_slice_mut().expect("layout"));
    }
}

/// Bidirectional single-layer LSTM/GRU; output is the final forward state
/// followed by the final backward state.
#[derive(Debug, Clone, PartialEq)]
pub struct BiRnn {
    pub forward_cell: RnnCell,
    pub backward_cell: RnnCell,
}

#[derive(Debug, Clone)]
pub struct BiRnnCache {
    tokens: Array2<f64>,
    fwd: Vec<Step>,
    bwd: Vec<Step>,
}

impl BiRnn {
    pub fn new<R: Rng>(rng: &mut R, kind: CellKind, input: usize, hidden: usize) -> Result<Self> {
        if hidden == 0 || input == 0 {
            return Err(Error::invalid("recurrent hidden and input sizes must be positive"));
        }
        Ok(BiRnn {
            forward_cell: RnnCell::new(rng, kind, input, hidden),
            backward_cell: RnnCell::new(rng, kind, input, hidden),
        })
    }

    pub fn kind(&self) -> CellKind {
        self.forward_cell.kind
    }

    pub fn input_dim(&self) -> usize {
        self.forward_cell.w_ih.ncols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward_cell.hidden()
    }

    pub fn forward(&self, tokens: ArrayView2<'_, f64>) -> Result<(Array1<f64>, BiRnnCache)> {
        if tokens.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "rnn expects token dim {}, got {}",
                self.input_dim(),
                tokens.ncols()
            )));
        }
        if tokens.nrows() == 0 {
            return Err(Error::invalid("rnn input has no tokens"));
        }
        let order: Vec<usize> = (0..tokens.nrows()).collect();
        let rev: Vec<usize> = order.iter().rev().copied().collect();
        let (hf, fwd) = self.forward_cell.run(tokens, &order);
        let (hb, bwd) = self.backward_cell.run(tokens, &rev);
        let mut out = Array1::zeros(self.output_dim());
        let h = self.forward_cell.hidden();
        out.slice_mut(s![..h]).assign(&hf);
        out.slice_mut(s![h..]).assign(&hb);
        Ok((
            out,
            BiRnnCache {
                tokens: tokens.to_owned(),
                fwd,
                bwd,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &BiRnnCache,
        dout: ArrayView1<'_, f64>,
        grad: &mut BiRnn,
        want_input_grad: bool,
    ) -> Option<Array2<f64>> {
        let h = self.forward_cell.hidden();
        let n = cache.tokens.nrows();
        let order: Vec<usize> = (0..n).collect();
        let rev: Vec<usize> = order.iter().rev().copied().collect();
        let mut dx = want_input_grad.then(|| Array2::zeros(cache.tokens.raw_dim()));
        self.forward_cell.backprop(
            cache.tokens.view(),
            &order,
            &cache.fwd,
            dout.slice(s![..h]),
            &mut grad.forward_cell,
            dx.as_mut(),
        );
        self.backward_cell.backprop(
            cache.tokens.view(),
            &rev,
            &cache.bwd,
            dout.slice(s![h..]),
            &mut grad.backward_cell,
            dx.as_mut(),
        );
        dx
    }
}

impl Module for BiRnn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.forward_cell.visit(&join(prefix, "fwd"), f);
        self.backward_cell.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.forward_cell.visit_mut(&join(prefix, "fwd"), f);
        self.backward_cell.visit_mut(&join(prefix, "bwd"), f);
    }
}
